import numpy as np
import pytest

from wfrqe.kg import generate_synthetic_kg
from wfrqe.queries import (
    Anchor,
    Intersection,
    Negation,
    Projection,
    QuerySyntaxError,
    Union,
    UnsupportedStructureError,
    apply_de_morgan,
    parse_query,
    query_type,
    serialize_query,
    symbolic_answers,
    to_dnf,
)


class TestParsing:
    def test_one_hop(self):
        assert parse_query("(p 2 (e 7))") == Projection(2, Anchor(7))

    def test_negated_intersection(self):
        tree = parse_query("(i (p 0 (e 1)) (n (p 1 (e 2))))")
        assert tree == Intersection(
            (Projection(0, Anchor(1)), Negation(Projection(1, Anchor(2))))
        )

    def test_unclosed_input(self):
        with pytest.raises(QuerySyntaxError, match="end of input"):
            parse_query("(u (e 1)")

    def test_unknown_tag(self):
        with pytest.raises(QuerySyntaxError, match="unknown tag"):
            parse_query("(x 1)")

    def test_arity_violation(self):
        with pytest.raises(QuerySyntaxError, match=">= 2"):
            parse_query("(u (e 1))")

    def test_error_carries_offset(self):
        with pytest.raises(QuerySyntaxError) as err:
            parse_query("(p 1 (q 2))")
        assert err.value.offset == 6

    def test_trailing_garbage(self):
        with pytest.raises(QuerySyntaxError, match="trailing"):
            parse_query("(e 1) (e 2)")

    def test_non_integer_id(self):
        with pytest.raises(QuerySyntaxError, match="integer"):
            parse_query("(e seven)")


class TestRoundTrips:
    def random_tree(self, rng, depth=3):
        if depth == 0 or rng.random() < 0.3:
            return Anchor(int(rng.integers(30)))
        kind = rng.integers(4)
        if kind == 0:
            return Projection(int(rng.integers(3)), self.random_tree(rng, depth - 1))
        if kind == 1:
            kids = tuple(self.random_tree(rng, depth - 1) for _ in range(rng.integers(2, 4)))
            return Intersection(kids)
        if kind == 2:
            kids = tuple(self.random_tree(rng, depth - 1) for _ in range(rng.integers(2, 4)))
            return Union(kids)
        return Negation(self.random_tree(rng, depth - 1))

    def test_parse_serialize_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            tree = self.random_tree(rng)
            assert parse_query(serialize_query(tree)) == tree


class TestDNF:
    def test_union_free_unchanged(self):
        tree = parse_query("(i (p 0 (e 1)) (p 1 (e 2)))")
        assert to_dnf(tree) == [tree]

    def test_two_way_union(self):
        a, b = parse_query("(p 0 (e 1))"), parse_query("(p 1 (e 2))")
        assert to_dnf(Union((a, b))) == [a, b]

    def test_union_under_projection(self):
        tree = parse_query("(p 2 (u (p 0 (e 1)) (p 1 (e 2))))")
        assert to_dnf(tree) == [
            parse_query("(p 2 (p 0 (e 1)))"),
            parse_query("(p 2 (p 1 (e 2)))"),
        ]

    def test_union_under_negation_rejected(self):
        tree = parse_query("(n (u (e 1) (e 2)))")
        with pytest.raises(UnsupportedStructureError):
            to_dnf(tree)

    def test_branch_union_preserves_answers(self):
        rng = np.random.default_rng(1)
        maker = TestRoundTrips()
        for trial in range(100):
            kg = generate_synthetic_kg(30, 3, 3, seed=trial)
            tree = maker.random_tree(rng)
            try:
                branches = to_dnf(tree)
            except UnsupportedStructureError:
                continue
            direct = symbolic_answers(tree, kg)
            unioned = set().union(*(symbolic_answers(b, kg) for b in branches))
            assert unioned == direct


class TestDeMorgan:
    def test_union_free_unchanged(self):
        tree = parse_query("(i (p 0 (e 1)) (n (e 2)))")
        assert apply_de_morgan(tree) == tree

    def test_literal_rewrite(self):
        tree = apply_de_morgan(parse_query("(u (e 1) (e 2))"))
        assert tree == parse_query("(n (i (n (e 1)) (n (e 2))))")

    def test_answers_preserved(self):
        rng = np.random.default_rng(2)
        maker = TestRoundTrips()
        for trial in range(100):
            kg = generate_synthetic_kg(30, 3, 3, seed=100 + trial)
            tree = maker.random_tree(rng)
            assert symbolic_answers(apply_de_morgan(tree), kg) == symbolic_answers(tree, kg)


class TestSymbolicAnswers:
    def test_anchor(self):
        kg = generate_synthetic_kg(5, 1, 1, seed=0)
        assert symbolic_answers(Anchor(3), kg) == {3}

    def test_negated_anchor(self):
        kg = generate_synthetic_kg(5, 1, 1, seed=0)
        assert symbolic_answers(Negation(Anchor(3)), kg) == {0, 1, 2, 4}

    def test_projection_follows_edges(self):
        kg = generate_synthetic_kg(20, 2, 3, seed=3)
        head = next(iter(kg.triples))[0]
        rel = next(iter(kg.triples))[1]
        expected = set(kg.tails(head, rel))
        assert symbolic_answers(Projection(rel, Anchor(head)), kg) == expected


class TestQueryType:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("(p 0 (e 1))", "1P"),
            ("(p 0 (p 1 (e 1)))", "2P"),
            ("(p 0 (p 1 (p 2 (e 1))))", "3P"),
            ("(i (p 0 (e 1)) (p 1 (e 2)))", "2I"),
            ("(i (p 0 (e 1)) (p 1 (e 2)) (p 2 (e 3)))", "3I"),
            ("(i (p 0 (p 1 (e 1))) (p 2 (e 2)))", "PI"),
            ("(p 0 (i (p 1 (e 1)) (p 2 (e 2))))", "IP"),
            ("(u (p 0 (e 1)) (p 1 (e 2)))", "2U"),
            ("(p 0 (u (p 1 (e 1)) (p 2 (e 2))))", "UP"),
            ("(i (p 0 (e 1)) (n (p 1 (e 2))))", "2IN"),
            ("(i (p 0 (e 1)) (p 1 (e 2)) (n (p 2 (e 3))))", "3IN"),
            ("(p 0 (i (p 1 (e 1)) (n (p 2 (e 2)))))", "INP"),
            ("(i (p 0 (p 1 (e 1))) (n (p 2 (e 2))))", "PIN"),
            ("(i (n (p 0 (p 1 (e 1)))) (p 2 (e 2)))", "PNI"),
            ("(e 0)", "other"),
            ("(i (e 1) (e 2))", "other"),
         ],
    )
    def test_classification(self, text, expected):
        assert query_type(parse_query(text)) == expected
