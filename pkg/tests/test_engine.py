import numpy as np
import pytest

from wfrqe.engine import embed_query, score_entities
from wfrqe.fuzzy import TNormKind
from wfrqe.model import init_model
from wfrqe.projection import logistic
from wfrqe.queries import parse_query
from wfrqe.transport import TransportConfig, wfr_distance_one_to_many


@pytest.fixture
def model():
    return init_model(20, 3, 16, 4, seed=0)


@pytest.fixture
def transport():
    return TransportConfig(epsilon=0.1, omega=3, iterations=10, block_size=8)


class TestEmbedQuery:
    def test_anchor_is_entity_histogram(self, model):
        embs = embed_query(parse_query("(e 5)"), model)
        assert len(embs) == 1
        np.testing.assert_array_equal(embs[0].values, model.entity_histogram(5))

    def test_dnf_union_gives_branch_embeddings(self, model):
        tree = parse_query("(u (p 0 (e 1)) (p 1 (e 2)))")
        embs = embed_query(tree, model, union_mode="dnf")
        assert len(embs) == 2
        left = embed_query(parse_query("(p 0 (e 1))"), model)[0]
        right = embed_query(parse_query("(p 1 (e 2))"), model)[0]
        np.testing.assert_array_equal(embs[0].values, left.values)
        np.testing.assert_array_equal(embs[1].values, right.values)

    def test_dm_union_single_embedding(self, model):
        tree = parse_query("(u (p 0 (e 1)) (p 1 (e 2)))")
        embs = embed_query(tree, model, union_mode="dm")
        assert len(embs) == 1

    def test_eval_mode_bit_identical(self, model):
        tree = parse_query("(i (p 0 (e 1)) (n (p 1 (e 2))))")
        a = embed_query(tree, model, training=False, seed=1)
        b = embed_query(tree, model, training=False, seed=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.values, y.values)

    def test_training_dropout_depends_on_seed(self, model):
        tree = parse_query("(n (p 0 (e 1)))")
        a = embed_query(tree, model, training=True, seed=1, drop_n=0.5)
        b = embed_query(tree, model, training=True, seed=1, drop_n=0.5)
        c = embed_query(tree, model, training=True, seed=2, drop_n=0.5)
        np.testing.assert_array_equal(a[0].values, b[0].values)
        assert not np.array_equal(a[0].values, c[0].values)

    def test_intersection_matches_fuzzy_ops(self, model):
        from wfrqe.fuzzy import intersect
        from wfrqe.measures import BoundedHistogram

        tree = parse_query("(i (p 0 (e 1)) (p 1 (e 2)))")
        embs = embed_query(tree, model, tnorm=TNormKind.GODEL)
        a = embed_query(parse_query("(p 0 (e 1))"), model)[0]
        b = embed_query(parse_query("(p 1 (e 2))"), model)[0]
        expected = intersect(a, b, TNormKind.GODEL)
        np.testing.assert_allclose(embs[0].values, expected.values, atol=1e-15)

    def test_out_of_range_ids(self, model):
        with pytest.raises(KeyError, match="entity"):
            embed_query(parse_query("(e 99)"), model)
        with pytest.raises(KeyError, match="relation"):
            embed_query(parse_query("(p 9 (e 1))"), model)

    def test_bad_union_mode(self, model):
        with pytest.raises(ValueError, match="union mode"):
            embed_query(parse_query("(e 1)"), model, union_mode="both")


class TestScoreEntities:
    def test_single_branch_equals_batch_distances(self, model, transport):
        embs = embed_query(parse_query("(p 0 (e 3))"), model)
        scores = score_entities(embs, model, transport)
        ents = model.entity_histograms()
        for e in (0, 7, 19):
            row = wfr_distance_one_to_many(ents[e], [embs[0].values], transport)
            assert scores[e] == row[0]

    def test_duplicated_branches_identical(self, model, transport):
        embs = embed_query(parse_query("(p 0 (e 3))"), model)
        one = score_entities(embs, model, transport)
        two = score_entities(embs + embs, model, transport)
        np.testing.assert_array_equal(one, two)

    def test_union_scores_bounded_by_branches(self, model, transport):
        tree = parse_query("(u (p 0 (e 1)) (p 1 (e 2)))")
        embs = embed_query(tree, model, union_mode="dnf")
        combined = score_entities(embs, model, transport)
        for emb in embs:
            branch = score_entities([emb], model, transport)
            assert np.all(combined <= branch + 1e-15)

    def test_empty_branch_list_rejected(self, model, transport):
        with pytest.raises(ValueError, match="branch"):
            score_entities([], model, transport)
