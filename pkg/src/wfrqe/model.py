"""Learnable parameters: entity logits plus the shared projection stack.

Entity histograms are the logistic of free logits, so every embedding sits
inside (0, 1)^d without any projection step after optimizer updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import DEFAULT_MASS_FLOOR
from .projection import ProjectionParams, init_projection_params, logistic


@dataclass
class ModelParams:
    entity_logits: np.ndarray  # (n_entities, d)
    projection: ProjectionParams
    mass_floor: float = DEFAULT_MASS_FLOOR

    @property
    def n_entities(self) -> int:
        return self.entity_logits.shape[0]

    @property
    def n_relations(self) -> int:
        return self.projection.num_relations

    @property
    def d(self) -> int:
        return self.entity_logits.shape[1]

    def entity_histograms(self) -> np.ndarray:
        """All entity mass vectors, clipped away from exact 0/1."""
        return np.clip(logistic(self.entity_logits), self.mass_floor, 1.0)

    def entity_histogram(self, entity_id: int) -> np.ndarray:
        if not 0 <= entity_id < self.n_entities:
            raise KeyError(f"entity id {entity_id} out of range")
        return np.clip(logistic(self.entity_logits[entity_id]), self.mass_floor, 1.0)

    def parameter_count(self) -> int:
        return self.entity_logits.size + self.projection.parameter_count()


COLD_LOGIT = -6.0
HOT_LOGIT_SPREAD = 0.5


def init_model(
    n_entities: int,
    n_relations: int,
    d: int,
    num_bases: int,
    layer_count: int = 1,
    seed=0,
    hot_bins: int | None = None,
) -> ModelParams:
    """Sparse diverse entity histograms plus a matched projection stack.

    Each entity starts with a handful of random hot bins near mass 1/2 and
    the rest near the floor, which keeps initial transport scores in the
    useful range of the training margin.  The projection's weight scale is
    normalized to the entity norm (so pre-activations are O(1) and queries
    differ across anchors from the start) and its bias starts at the same
    mass scale as the entities.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if hot_bins is None:
        hot_bins = max(1, d // 8)
    hot_bins = min(hot_bins, d)
    logits = rng.normal(COLD_LOGIT, HOT_LOGIT_SPREAD, size=(n_entities, d))
    for e in range(n_entities):
        hot = rng.choice(d, size=hot_bins, replace=False)
        logits[e, hot] = rng.normal(0.0, HOT_LOGIT_SPREAD, size=hot_bins)
    masses = logistic(logits)
    entity_norm = float(np.sqrt((masses**2).sum(axis=1).mean()))
    proj = init_projection_params(
        d,
        n_relations,
        num_bases,
        layer_count,
        rng,
        weight_gain=2.0 * np.sqrt(d) / max(entity_norm, 1e-3),
        bias_center=-3.0,
        relation_noise=0.3,
    )
    return ModelParams(logits, proj)


@dataclass
class ModelGrads:
    """Dense gradient accumulator matching ModelParams' layout."""

    entity_logits: np.ndarray
    basis_weights: list
    basis_biases: list
    relation_embeddings: np.ndarray

    @classmethod
    def zeros_like(cls, model: ModelParams) -> "ModelGrads":
        proj = model.projection
        return cls(
            np.zeros_like(model.entity_logits),
            [np.zeros_like(W) for W in proj.basis_weights],
            [np.zeros_like(b) for b in proj.basis_biases],
            np.zeros_like(proj.relation_embeddings),
        )

    def scale(self, factor: float) -> None:
        self.entity_logits *= factor
        for W in self.basis_weights:
            W *= factor
        for b in self.basis_biases:
            b *= factor
        self.relation_embeddings *= factor


def params_as_dict(model: ModelParams) -> dict:
    """Flat name -> array view of every trainable tensor (shared storage)."""
    out = {"entity_logits": model.entity_logits,
           "relation_embeddings": model.projection.relation_embeddings}
    for l, (W, b) in enumerate(
        zip(model.projection.basis_weights, model.projection.basis_biases)
    ):
        out[f"basis_weights_{l}"] = W
        out[f"basis_biases_{l}"] = b
    return out


def grads_as_dict(grads: ModelGrads) -> dict:
    out = {"entity_logits": grads.entity_logits,
           "relation_embeddings": grads.relation_embeddings}
    for l, (W, b) in enumerate(zip(grads.basis_weights, grads.basis_biases)):
        out[f"basis_weights_{l}"] = W
        out[f"basis_biases_{l}"] = b
    return out
