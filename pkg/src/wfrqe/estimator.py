"""Scikit-learn style front end over the query embedding pipeline.

`WfrQueryEmbedding` behaves like any other estimator: hyperparameters in
`__init__`, learned state on fitted attributes with trailing underscores,
`get_params`/`set_params`/`clone` support via sklearn's BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_query_tree, check_kg, check_samples, check_scalar
from .engine import embed_query, score_entities
from .evaluation import evaluate
from .fuzzy import TNormKind
from .model import init_model
from .training import TrainConfig, train
from .transport import TransportConfig


class WfrQueryEmbedding(BaseEstimator):
    """Answers logical queries over an incomplete knowledge graph.

    Entities and query answer sets are embedded as bounded histograms;
    candidates are ranked by an entropic unbalanced-transport score whose
    window and block sizes bound how far mass may travel.

    Parameters mirror the training pipeline; see `TrainConfig` and
    `TransportConfig` for their exact meaning.

    Examples
    --------
    >>> from wfrqe.kg import generate_synthetic_kg, sample_queries
    >>> kg = generate_synthetic_kg(30, 2, 3, seed=1)
    >>> queries = sample_queries(kg, kg, "1P", 50, seed=1, require_hard=False)
    >>> est = WfrQueryEmbedding(dim=16, bases=4, steps=20, k_neg=4)
    >>> ranking = est.fit(kg, queries).predict(["(p 0 (e 3))"])[0]
    """

    def __init__(
        self,
        dim: int = 64,
        bases: int = 8,
        layer_count: int = 1,
        epsilon: float = 0.1,
        omega: int = 3,
        beta: float = 1.0,
        block_size: int | None = None,
        sinkhorn_iters: int = 10,
        learning_rate: float = 5e-4,
        weight_decay: float = 0.01,
        steps: int = 1000,
        k_neg: int = 32,
        margin: float = 37.5,
        scale: float = 120.0,
        drop_p: float = 0.05,
        drop_n: float = 0.1,
        tnorm: str = "product",
        union_mode: str = "dnf",
        grad_mode: str = "unrolled",
        batch_size: int = 8,
        seed: int = 0,
    ):
        self.dim = dim
        self.bases = bases
        self.layer_count = layer_count
        self.epsilon = epsilon
        self.omega = omega
        self.beta = beta
        self.block_size = block_size
        self.sinkhorn_iters = sinkhorn_iters
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.steps = steps
        self.k_neg = k_neg
        self.margin = margin
        self.scale = scale
        self.drop_p = drop_p
        self.drop_n = drop_n
        self.tnorm = tnorm
        self.union_mode = union_mode
        self.grad_mode = grad_mode
        self.batch_size = batch_size
        self.seed = seed

    # ------------------------------------------------------------------

    def _make_configs(self) -> TrainConfig:
        check_scalar(self.dim, "dim", minimum=1)
        check_scalar(self.bases, "bases", minimum=1)
        transport = TransportConfig(
            epsilon=self.epsilon,
            omega=self.omega,
            beta=self.beta,
            block_size=self.block_size,
            iterations=self.sinkhorn_iters,
        )
        if self.block_size is None and self.dim < self.omega:
            raise ValueError("dim must be at least omega")
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            steps=self.steps,
            k_neg=self.k_neg,
            margin=self.margin,
            scale=self.scale,
            drop_p=self.drop_p,
            drop_n=self.drop_n,
            tnorm=TNormKind(self.tnorm),
            transport=transport,
            grad_mode=self.grad_mode,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def fit(self, kg, queries, valid_queries=None):
        """Train entity embeddings and projections on query samples.

        kg : KnowledgeGraph supplying entity/relation counts
        queries : list of QuerySample with training (easy) answers
        valid_queries : optional eval samples, scored every 10 log windows
        """
        kg = check_kg(kg)
        queries = check_samples(queries, require_answers=True)
        config = self._make_configs()
        model = init_model(
            kg.entity_count, kg.relation_count, self.dim, self.bases,
            self.layer_count, self.seed,
        )
        model, log_rows = train(
            model,
            queries,
            config,
            valid_samples=valid_queries,
            valid_every=10 * config.log_every if valid_queries else 0,
        )
        self.model_ = model
        self.config_ = config
        self.transport_ = config.transport
        self.train_log_ = log_rows
        self.n_entities_ = kg.entity_count
        self.n_relations_ = kg.relation_count
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def score_samples(self, queries) -> np.ndarray:
        """Distance of every entity to each query; shape (n_queries, n_entities)."""
        self._check_fitted()
        out = []
        for q in queries:
            tree = as_query_tree(q)
            embs = embed_query(
                tree,
                self.model_,
                union_mode=self.union_mode,
                training=False,
                tnorm=TNormKind(self.tnorm),
            )
            out.append(score_entities(embs, self.model_, self.transport_))
        return np.stack(out)

    def predict(self, queries) -> list:
        """Entity ids for each query, best candidates first."""
        scores = self.score_samples(queries)
        return [np.argsort(row, kind="stable") for row in scores]

    def score(self, queries, y=None) -> float:
        """Mean MRR over evaluation samples (hard answers, filtered)."""
        self._check_fitted()
        samples = check_samples(queries)
        report = evaluate(
            self.model_,
            samples,
            self.transport_,
            union_mode=self.union_mode,
            tnorm=TNormKind(self.tnorm),
        )
        return report.mean_mrr()

    def evaluate_report(self, queries, threads: int = 1):
        """Full per-structure EvalReport for evaluation samples."""
        self._check_fitted()
        return evaluate(
            self.model_,
            check_samples(queries),
            self.transport_,
            union_mode=self.union_mode,
            tnorm=TNormKind(self.tnorm),
            threads=threads,
        )
