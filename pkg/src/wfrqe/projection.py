"""Relation-conditioned neural set projection with manual backward.

A stack of affine layers whose weights are mixed from shared bases by a
per-relation embedding: W_r = sum_j V_j r_j, b_r = sum_j a_j r_j.  The
logistic activation keeps outputs inside (0, 1) so the result is always a
valid mass vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import BoundedHistogram, as_mass_array


def logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ProjectionParams:
    """Shared bases plus per-relation mixing coefficients.

    basis_weights : per layer, array (K, d_out, d_in)
    basis_biases : per layer, array (K, d_out)
    relation_embeddings : array (num_relations, K)
    layer_dims : [d_0, ..., d_L]; first and last equal the histogram dim
    """

    basis_weights: list[np.ndarray]
    basis_biases: list[np.ndarray]
    relation_embeddings: np.ndarray
    layer_dims: list[int] = field(default_factory=list)

    @property
    def num_bases(self) -> int:
        return self.relation_embeddings.shape[1]

    @property
    def num_relations(self) -> int:
        return self.relation_embeddings.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.basis_weights)

    def parameter_count(self) -> int:
        n = self.relation_embeddings.size
        for W, b in zip(self.basis_weights, self.basis_biases):
            n += W.size + b.size
        return n

    def relation_weights(self, relation_id: int, layer: int):
        """Materialize (W_r, b_r) for one relation and layer."""
        r = self.relation_embeddings[relation_id]
        W = np.tensordot(r, self.basis_weights[layer], axes=1)
        b = r @ self.basis_biases[layer]
        return W, b


def init_projection_params(
    d: int,
    num_relations: int,
    num_bases: int,
    layer_count: int = 1,
    seed=0,
    weight_gain: float = 1.0,
    bias_center: float = 0.0,
    relation_noise: float = 0.1,
) -> ProjectionParams:
    """Variance-preserving initialization, deterministic under the seed.

    Bases are scaled by weight_gain/sqrt(K * d_in); relation embeddings
    start near 1/K so the initial W_r is roughly the average of the bases.
    bias_center shifts the initial pre-activations, which sets the mass
    scale the projection emits before any training.
    """
    if d < 1 or num_bases < 1 or layer_count < 1 or num_relations < 1:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [d] * (layer_count + 1)
    weights, biases = [], []
    for l in range(layer_count):
        scale = weight_gain / np.sqrt(num_bases * dims[l])
        weights.append(rng.normal(0.0, scale, size=(num_bases, dims[l + 1], dims[l])))
        biases.append(
            rng.normal(bias_center, max(scale, 0.5), size=(num_bases, dims[l + 1]))
        )
    rel = rng.normal(
        1.0 / num_bases, relation_noise / num_bases, size=(num_relations, num_bases)
    )
    return ProjectionParams(weights, biases, rel, dims)


@dataclass
class ProjectionCache:
    """Per-layer intermediates needed by the backward pass."""

    relation_id: int
    inputs: list[np.ndarray]  # layer input after dropout
    raw_inputs: list[np.ndarray]  # layer input before dropout
    outputs: list[np.ndarray]  # logistic activations
    drop_masks: list[np.ndarray | None]
    drop_p: float


def project(
    h,
    relation_id: int,
    params: ProjectionParams,
    want_cache: bool = False,
    training: bool = False,
    drop_p: float = 0.0,
    rng=None,
):
    """Apply the relation's projection MLP to a mass vector.

    With `training` set, inverted dropout at rate drop_p is applied to each
    layer input.  Returns the projected histogram, plus a cache when
    `want_cache` is true.
    """
    if not 0 <= relation_id < params.num_relations:
        raise KeyError(f"unknown relation id {relation_id}")
    x = as_mass_array(h)
    if x.shape[0] != params.layer_dims[0]:
        raise ValueError(
            f"input dim {x.shape[0]} != projection dim {params.layer_dims[0]}"
        )
    use_dropout = training and drop_p > 0.0
    if use_dropout and rng is None:
        rng = np.random.default_rng(0)

    cache = ProjectionCache(relation_id, [], [], [], [], drop_p) if want_cache else None
    for layer in range(params.num_layers):
        raw = x
        mask = None
        if use_dropout:
            mask = rng.random(x.shape[0]) >= drop_p
            x = x * mask / (1.0 - drop_p)
        W, b = params.relation_weights(relation_id, layer)
        y = logistic(W @ x + b)
        if cache is not None:
            cache.raw_inputs.append(raw)
            cache.inputs.append(x)
            cache.outputs.append(y)
            cache.drop_masks.append(mask)
        x = y

    floor = h.mass_floor if isinstance(h, BoundedHistogram) else 1e-6
    out = BoundedHistogram(x, floor)
    return (out, cache) if want_cache else out


@dataclass
class ProjectionGrads:
    grad_input: np.ndarray
    grad_basis_weights: list[np.ndarray]
    grad_basis_biases: list[np.ndarray]
    grad_relation: np.ndarray  # (K,) for the cached relation


def project_backward(
    grad_out: np.ndarray, cache: ProjectionCache, params: ProjectionParams
) -> ProjectionGrads:
    """Exact reverse-mode gradients through the cached forward pass."""
    if cache is None or not cache.outputs:
        raise ValueError("backward needs the cache of a matching forward pass")
    r = params.relation_embeddings[cache.relation_id]
    g = np.asarray(grad_out, dtype=np.float64)
    gW = [np.zeros_like(W) for W in params.basis_weights]
    gb = [np.zeros_like(b) for b in params.basis_biases]
    gr = np.zeros_like(r)
    for layer in reversed(range(params.num_layers)):
        y = cache.outputs[layer]
        x = cache.inputs[layer]
        gz = g * y * (1.0 - y)
        W, _ = params.relation_weights(cache.relation_id, layer)
        grad_W = np.outer(gz, x)
        gW[layer] += r[:, None, None] * grad_W[None, :, :]
        gb[layer] += r[:, None] * gz[None, :]
        gr += np.tensordot(params.basis_weights[layer], grad_W, axes=([1, 2], [0, 1]))
        gr += params.basis_biases[layer] @ gz
        g = W.T @ gz
        mask = cache.drop_masks[layer]
        if mask is not None:
            g = g * mask / (1.0 - cache.drop_p)
    return ProjectionGrads(g, gW, gb, gr)
