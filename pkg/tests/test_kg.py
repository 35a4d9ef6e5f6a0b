import numpy as np
import pytest

from wfrqe.kg import (
    QuerySample,
    SamplingExhaustedError,
    TripleParseError,
    generate_synthetic_kg,
    load_queries,
    load_triples,
    make_graph,
    sample_queries,
    save_queries,
    save_triples,
    split_nested,
)
from wfrqe.queries import QUERY_TYPE_TAGS, parse_query, query_type, symbolic_answers


class TestLoadTriples:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("# entities=3 relations=1\n")
        kg = load_triples(path)
        assert kg.entity_count == 3 and kg.relation_count == 1 and len(kg) == 0

    def test_duplicates_collapse(self, tmp_path):
        path = tmp_path / "dup.tsv"
        path.write_text("0\t0\t1\n0\t0\t1\n")
        assert len(load_triples(path)) == 1

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a b c\n")
        with pytest.raises(TripleParseError, match="bad.tsv:1"):
            load_triples(path)

    def test_counts_from_max_ids(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("0\t0\t5\n2\t3\t1\n")
        kg = load_triples(path)
        assert kg.entity_count == 6 and kg.relation_count == 4

    def test_round_trip(self, tmp_path):
        kg = generate_synthetic_kg(20, 2, 3, seed=0)
        save_triples(tmp_path / "kg.tsv", kg)
        back = load_triples(tmp_path / "kg.tsv")
        assert back.triples == kg.triples
        assert back.entity_count == kg.entity_count


class TestSplitNested:
    def test_fraction_arithmetic(self):
        kg = generate_synthetic_kg(100, 2, 5, seed=1)
        n = len(kg)
        train, valid, test = split_nested(kg, 0.1, 0.1, seed=2)
        assert len(test) == n
        assert len(valid) == n - round(0.1 * n)
        assert len(train) == n - 2 * round(0.1 * n)

    def test_nesting_invariant(self):
        kg = generate_synthetic_kg(60, 3, 4, seed=3)
        train, valid, test = split_nested(kg, 0.15, 0.2, seed=4)
        assert train.triples <= valid.triples <= test.triples

    def test_seed_reproducible(self):
        kg = generate_synthetic_kg(60, 3, 4, seed=5)
        a = split_nested(kg, 0.1, 0.1, seed=6)
        b = split_nested(kg, 0.1, 0.1, seed=6)
        for x, y in zip(a, b):
            assert x.triples == y.triples

    def test_bad_fractions(self):
        kg = generate_synthetic_kg(10, 1, 2, seed=7)
        with pytest.raises(ValueError):
            split_nested(kg, 0.6, 0.5, seed=0)
        with pytest.raises(ValueError):
            split_nested(kg, 0.0, 0.1, seed=0)


class TestSyntheticKG:
    def test_expected_triple_count(self):
        kg = generate_synthetic_kg(50, 3, 4, seed=11)
        expected = 50 * 3 * 4
        assert expected * 0.75 <= len(kg) <= expected * 1.25

    def test_no_self_loops(self):
        kg = generate_synthetic_kg(40, 2, 5, seed=12)
        assert all(h != t for h, _, t in kg.triples)

    def test_seed_reproduces_exactly(self):
        a = generate_synthetic_kg(30, 2, 3, seed=13)
        b = generate_synthetic_kg(30, 2, 3, seed=13)
        assert a.sorted_triples() == b.sorted_triples()

    def test_ids_in_range(self):
        kg = generate_synthetic_kg(25, 4, 2, seed=14)
        assert all(0 <= h < 25 and 0 <= r < 4 and 0 <= t < 25 for h, r, t in kg.triples)

    def test_tiny_graph_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic_kg(1, 1, 1, seed=0)


class TestQueryFiles:
    def test_parse_record(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text('{"query": "(p 0 (e 1))", "easy": [2], "hard": [3]}\n')
        samples = load_queries(path)
        assert samples[0].tree == parse_query("(p 0 (e 1))")
        assert samples[0].easy_answers == {2}
        assert samples[0].hard_answers == {3}

    def test_missing_hard_defaults_empty(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text('{"query": "(p 0 (e 1))", "easy": [2]}\n')
        assert load_queries(path)[0].hard_answers == frozenset()

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "q.jsonl"
        path.write_text('{"query": "(p 0 (e 1))"}\nnot json\n')
        with pytest.raises(ValueError, match=":2"):
            load_queries(path)

    def test_round_trip_many(self, tmp_path):
        kg = generate_synthetic_kg(40, 3, 4, seed=20)
        train, _, test = split_nested(kg, 0.1, 0.1, seed=20)
        rng = np.random.default_rng(21)
        samples = []
        for tag in ("1P", "2P", "2I", "2IN"):
            samples.extend(sample_queries(train, test, tag, 20, seed=int(rng.integers(1 << 30))))
        path = tmp_path / "all.jsonl"
        save_queries(path, samples)
        back = load_queries(path)
        assert len(back) == len(samples)
        for orig, loaded in zip(samples, back):
            assert loaded.tree == orig.tree
            assert loaded.easy_answers == orig.easy_answers
            assert loaded.hard_answers == orig.hard_answers

    def test_disjoint_answer_sets_enforced(self):
        with pytest.raises(ValueError, match="disjoint"):
            QuerySample(parse_query("(e 1)"), frozenset({1, 2}), frozenset({2}))


class TestSampleQueries:
    @pytest.mark.parametrize("tag", QUERY_TYPE_TAGS)
    def test_every_template_instantiates(self, tag):
        kg = generate_synthetic_kg(50, 3, 4, seed=30)
        train, _, test = split_nested(kg, 0.1, 0.1, seed=30)
        samples = sample_queries(train, test, tag, 5, seed=31)
        assert len(samples) == 5
        for s in samples:
            assert query_type(s.tree) == tag
            assert s.hard_answers

    def test_hard_answers_match_traversal(self):
        kg = generate_synthetic_kg(40, 3, 4, seed=32)
        train, _, test = split_nested(kg, 0.1, 0.1, seed=32)
        for tag in ("1P", "2P", "2I", "IP"):
            for s in sample_queries(train, test, tag, 10, seed=33):
                full = symbolic_answers(s.tree, test)
                easy = symbolic_answers(s.tree, train)
                assert s.easy_answers == easy
                assert s.hard_answers == full - easy
                # monotone structures: easy and hard partition the full set
                assert s.easy_answers | s.hard_answers == full

    def test_training_split_keeps_easy_only(self):
        kg = generate_synthetic_kg(40, 3, 4, seed=34)
        train, _, _ = split_nested(kg, 0.1, 0.1, seed=34)
        samples = sample_queries(train, train, "1P", 10, seed=35, require_hard=False)
        assert all(not s.hard_answers for s in samples)
        assert all(s.easy_answers for s in samples)

    def test_seed_reproducible(self):
        kg = generate_synthetic_kg(40, 3, 4, seed=36)
        train, _, test = split_nested(kg, 0.1, 0.1, seed=36)
        a = sample_queries(train, test, "2I", 8, seed=37)
        b = sample_queries(train, test, "2I", 8, seed=37)
        assert [s.tree for s in a] == [s.tree for s in b]

    def test_exhaustion_error(self):
        # a graph with no edges cannot yield projection queries
        kg = make_graph(5, 1, set())
        with pytest.raises(SamplingExhaustedError):
            sample_queries(kg, kg, "1P", 3, seed=0, require_hard=False,
                           max_attempts_per_query=10)
