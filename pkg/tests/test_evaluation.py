import numpy as np
import pytest

from wfrqe.evaluation import (
    EvalReport,
    evaluate,
    evaluate_with_scorer,
    expected_null_mrr,
    hits_at_k,
    rank_answer,
)
from wfrqe.kg import QuerySample, generate_synthetic_kg, sample_queries, split_nested
from wfrqe.model import init_model
from wfrqe.queries import parse_query, symbolic_answers
from wfrqe.transport import TransportConfig


class TestRankAnswer:
    def test_strictly_best_is_rank_one(self):
        assert rank_answer(np.array([0.1, 0.2, 0.3]), 0) == 1.0

    def test_reciprocal_of_rank_one(self):
        rank = rank_answer(np.array([0.1, 0.2, 0.3]), 0)
        assert 1.0 / rank == 1.0

    def test_all_tied_average(self):
        for n in (3, 4, 7):
            scores = np.full(n, 0.5)
            assert rank_answer(scores, 0) == pytest.approx((n + 1) / 2)

    def test_excluded_ids_ignored(self):
        scores = np.array([0.5, 0.1, 0.2, 0.9])
        assert rank_answer(scores, 0, exclude={1, 2}) == 1.0 + 0.0

    def test_answer_in_exclude_rejected(self):
        with pytest.raises(ValueError, match="excluded"):
            rank_answer(np.array([0.1, 0.2]), 0, exclude={0})

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            scores = rng.normal(0, 1, 20)
            answer = int(rng.integers(20))
            r1 = rank_answer(scores, answer)
            r2 = rank_answer(np.exp(scores * 2.0), answer)
            assert r1 == r2

    def test_filtering_never_hurts(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            scores = rng.normal(0, 1, 30)
            answer = 5
            base = rank_answer(scores, answer)
            more = rank_answer(scores, answer, exclude={3, 9, 17})
            assert more <= base

    def test_non_finite_scores_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            rank_answer(np.array([0.1, np.inf]), 0)


class TestHits:
    def test_round_half_up(self):
        assert hits_at_k(3.5, 3) == 0.0  # rounds to 4
        assert hits_at_k(3.4, 3) == 1.0  # rounds to 3
        assert hits_at_k(1.0, 1) == 1.0

    def test_ordering(self):
        for rank in (1.0, 2.5, 7.0, 15.0):
            assert hits_at_k(rank, 1) <= hits_at_k(rank, 3) <= hits_at_k(rank, 10)


class TestEvaluate:
    def _samples(self, n=20):
        kg = generate_synthetic_kg(40, 3, 4, seed=50)
        train, _, test = split_nested(kg, 0.1, 0.1, seed=50)
        samples = []
        for tag in ("1P", "2I", "2IN"):
            samples.extend(sample_queries(train, test, tag, n, seed=51))
        return test, samples

    def test_oracle_scorer_perfect_mrr(self):
        kg, samples = self._samples(10)

        def oracle(sample):
            answers = symbolic_answers(sample.tree, kg)
            scores = np.ones(kg.entity_count)
            scores[sorted(answers)] = 0.0
            return scores

        report = evaluate_with_scorer(samples, oracle)
        for metrics in report.per_type.values():
            assert metrics.mrr == pytest.approx(1.0)
            assert metrics.hits1 == pytest.approx(1.0)

    def test_hits_ordering_on_real_model(self):
        _, samples = self._samples(5)
        model = init_model(40, 3, 16, 4, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=3, iterations=5, block_size=8)
        report = evaluate(model, samples, cfg)
        for m in report.per_type.values():
            assert m.hits1 <= m.hits3 <= m.hits10
            assert 0.0 <= m.mrr <= 1.0

    def test_aggregates_are_type_means(self):
        _, samples = self._samples(5)
        model = init_model(40, 3, 16, 4, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=3, iterations=5, block_size=8)
        report = evaluate(model, samples, cfg)
        pos = [m.mrr for t, m in report.per_type.items() if t in ("1P", "2I")]
        neg = [m.mrr for t, m in report.per_type.items() if t == "2IN"]
        assert report.a_p == pytest.approx(np.mean(pos))
        assert report.a_n == pytest.approx(np.mean(neg))

    def test_deterministic(self):
        _, samples = self._samples(5)
        model = init_model(40, 3, 16, 4, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=3, iterations=5, block_size=8)
        r1 = evaluate(model, samples, cfg)
        r2 = evaluate(model, samples, cfg)
        assert r1.to_json_dict() == r2.to_json_dict()

    def test_threads_match_serial(self):
        _, samples = self._samples(5)
        model = init_model(40, 3, 16, 4, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=3, iterations=5, block_size=8)
        serial = evaluate(model, samples, cfg, threads=1)
        parallel = evaluate(model, samples, cfg, threads=2)
        assert serial.to_json_dict() == parallel.to_json_dict()

    def test_empty_samples_rejected(self):
        model = init_model(10, 2, 8, 2, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=1, iterations=5)
        with pytest.raises(ValueError, match="samples"):
            evaluate(model, [], cfg)

    def test_empty_hard_rejected(self):
        model = init_model(10, 2, 8, 2, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=1, iterations=5)
        samples = [QuerySample(parse_query("(p 0 (e 1))"), frozenset({2}), frozenset())]
        with pytest.raises(ValueError, match="hard"):
            evaluate(model, samples, cfg)

    def test_tsv_format(self):
        _, samples = self._samples(3)
        model = init_model(40, 3, 16, 4, seed=0)
        cfg = TransportConfig(epsilon=0.1, omega=3, iterations=5, block_size=8)
        tsv = evaluate(model, samples, cfg).to_tsv()
        header, *rows = tsv.strip().split("\n")
        assert header == "type\tmrr\thits1\thits3\thits10\tn"
        assert all(len(r.split("\t")) == 6 for r in rows)


class TestNullModel:
    def test_analytic_value(self):
        assert expected_null_mrr(100) == pytest.approx(0.05187378, abs=1e-6)

    def test_random_scores_match_analytic(self):
        rng = np.random.default_rng(123)
        n, trials = 100, 3000
        total = 0.0
        for _ in range(trials):
            scores = rng.random(n)
            answer = int(rng.integers(n))
            total += 1.0 / rank_answer(scores, answer)
        measured = total / trials
        assert measured == pytest.approx(expected_null_mrr(n), abs=0.01)
