"""Filtered ranking metrics: MRR and Hits@K per query structure."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import embed_query, score_entities
from .fuzzy import TNormKind
from .queries import NEGATION_QUERY_TYPES, query_type
from .transport import TransportConfig

HITS_AT = (1, 3, 10)


def rank_answer(scores: np.ndarray, answer: int, exclude=frozenset()) -> float:
    """Average-tie-break rank of the answer among non-excluded entities.

    rank = 1 + #{strictly better} + 0.5 * #{tied others}; ties are split
    evenly so the estimate is unbiased and deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if answer in exclude:
        raise ValueError(f"answer {answer} is excluded from its own pool")
    mask = np.ones(scores.shape[0], dtype=bool)
    if exclude:
        mask[np.fromiter(exclude, dtype=int, count=len(exclude))] = False
    mask[answer] = False
    others = scores[mask]
    s = scores[answer]
    return float(1.0 + np.sum(others < s) + 0.5 * np.sum(others == s))


def hits_at_k(rank: float, k: int) -> float:
    """Hit indicator with the fractional rank rounded half-up."""
    return 1.0 if math.floor(rank + 0.5) <= k else 0.0


@dataclass
class TypeMetrics:
    mrr: float = 0.0
    hits1: float = 0.0
    hits3: float = 0.0
    hits10: float = 0.0
    n: int = 0


@dataclass
class EvalReport:
    per_type: dict = field(default_factory=dict)  # tag -> TypeMetrics
    a_p: float = float("nan")
    a_n: float = float("nan")

    def mean_mrr(self) -> float:
        if not self.per_type:
            return float("nan")
        return float(np.mean([m.mrr for m in self.per_type.values()]))

    def to_tsv(self) -> str:
        lines = ["type\tmrr\thits1\thits3\thits10\tn"]
        for tag in sorted(self.per_type):
            m = self.per_type[tag]
            lines.append(
                f"{tag}\t{m.mrr:.6f}\t{m.hits1:.6f}\t{m.hits3:.6f}\t{m.hits10:.6f}\t{m.n}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "per_type": {
                tag: {"mrr": m.mrr, "hits1": m.hits1, "hits3": m.hits3,
                      "hits10": m.hits10, "n": m.n}
                for tag, m in self.per_type.items()
            },
            "A_P": self.a_p,
            "A_N": self.a_n,
        }


def _metrics_for_sample(sample, scores):
    hard = sorted(sample.hard_answers)
    rrs, h1, h3, h10 = [], [], [], []
    for ans in hard:
        exclude = (sample.easy_answers | sample.hard_answers) - {ans}
        rank = rank_answer(scores, ans, exclude)
        rrs.append(1.0 / rank)
        h1.append(hits_at_k(rank, 1))
        h3.append(hits_at_k(rank, 3))
        h10.append(hits_at_k(rank, 10))
    return (
        query_type(sample.tree),
        float(np.mean(rrs)),
        float(np.mean(h1)),
        float(np.mean(h3)),
        float(np.mean(h10)),
    )


def evaluate(
    model,
    samples,
    transport: TransportConfig,
    union_mode: str = "dnf",
    tnorm: TNormKind = TNormKind.PRODUCT,
    threads: int = 1,
) -> EvalReport:
    """Rank every hard answer of every sample under the filtered protocol.

    Reciprocal ranks are averaged per answer, then per query, then per
    structure tag.  A_P aggregates structures without negation, A_N those
    with it.
    """
    def scorer(sample):
        embs = embed_query(
            sample.tree, model, union_mode=union_mode, training=False, tnorm=tnorm
        )
        return score_entities(embs, model, transport)

    return evaluate_with_scorer(samples, scorer, threads=threads)


def evaluate_with_scorer(samples, scorer, threads: int = 1) -> EvalReport:
    """Like `evaluate`, but scores come from an arbitrary sample -> scores map."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    for s in samples:
        if not s.hard_answers:
            raise ValueError("every evaluation sample needs a non-empty hard answer set")

    run = lambda s: _metrics_for_sample(s, scorer(s))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, samples))
    else:
        rows = [run(s) for s in samples]

    buckets: dict = {}
    for tag, mrr, h1, h3, h10 in rows:
        buckets.setdefault(tag, []).append((mrr, h1, h3, h10))
    report = EvalReport()
    for tag, vals in buckets.items():
        arr = np.asarray(vals)
        report.per_type[tag] = TypeMetrics(
            mrr=float(arr[:, 0].mean()),
            hits1=float(arr[:, 1].mean()),
            hits3=float(arr[:, 2].mean()),
            hits10=float(arr[:, 3].mean()),
            n=len(vals),
        )
    pos = [m.mrr for tag, m in report.per_type.items() if tag not in NEGATION_QUERY_TYPES]
    neg = [m.mrr for tag, m in report.per_type.items() if tag in NEGATION_QUERY_TYPES]
    report.a_p = float(np.mean(pos)) if pos else float("nan")
    report.a_n = float(np.mean(neg)) if neg else float("nan")
    return report


def expected_null_mrr(n_candidates: int) -> float:
    """Analytic MRR of uniformly random scores with one relevant answer."""
    return float(sum(1.0 / r for r in range(1, n_candidates + 1)) / n_candidates)
