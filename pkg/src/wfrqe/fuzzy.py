"""Closed-form set operations on histograms via element-wise t-norms.

Each t-norm is paired with the t-conorm dual to it under the complement
n(x) = 1 - x, so De Morgan identities hold exactly (up to the floor).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .measures import BoundedHistogram, as_mass_array, new_histogram


class TNormKind(str, Enum):
    PRODUCT = "product"
    GODEL = "godel"
    LUKASIEWICZ = "lukasiewicz"


def _tnorm_values(x: np.ndarray, y: np.ndarray, kind: TNormKind) -> np.ndarray:
    if kind == TNormKind.PRODUCT:
        return x * y
    if kind == TNormKind.GODEL:
        return np.minimum(x, y)
    if kind == TNormKind.LUKASIEWICZ:
        return np.maximum(0.0, x + y - 1.0)
    raise ValueError(f"unknown t-norm {kind!r}")


def _tconorm_values(x: np.ndarray, y: np.ndarray, kind: TNormKind) -> np.ndarray:
    if kind == TNormKind.PRODUCT:
        return x + y - x * y
    if kind == TNormKind.GODEL:
        return np.maximum(x, y)
    if kind == TNormKind.LUKASIEWICZ:
        return np.minimum(1.0, x + y)
    raise ValueError(f"unknown t-norm {kind!r}")


def _check_dims(h1: BoundedHistogram, h2: BoundedHistogram) -> None:
    if h1.d != h2.d:
        raise ValueError(f"dimension mismatch: {h1.d} vs {h2.d}")


def intersect(
    h1: BoundedHistogram, h2: BoundedHistogram, kind: TNormKind = TNormKind.PRODUCT
) -> BoundedHistogram:
    """Element-wise t-norm of two histograms."""
    _check_dims(h1, h2)
    return new_histogram(_tnorm_values(h1.values, h2.values, kind), h1.mass_floor)


def union(
    h1: BoundedHistogram, h2: BoundedHistogram, kind: TNormKind = TNormKind.PRODUCT
) -> BoundedHistogram:
    """Element-wise t-conorm of two histograms."""
    _check_dims(h1, h2)
    return new_histogram(_tconorm_values(h1.values, h2.values, kind), h1.mass_floor)


def complement(h: BoundedHistogram) -> BoundedHistogram:
    """Element-wise 1 - x, re-floored."""
    return new_histogram(1.0 - h.values, h.mass_floor)


def dropout_mask(d: int, p: float, rng_seed) -> np.ndarray:
    """Boolean mask of positions to pin at 1/2, reproducible under the seed."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1], got {p}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.random(d) < p


def complement_with_dropout(
    h: BoundedHistogram, p: float, training: bool, rng_seed=0
) -> BoundedHistogram:
    """Complement with training-time regularization.

    While training, each element is independently reset to 1/2 with
    probability p before complementing, so dropped positions stay at 1/2
    afterwards.  In eval mode this is exactly `complement`.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1], got {p}")
    if not training or p == 0.0:
        return complement(h)
    mask = dropout_mask(h.d, p, rng_seed)
    values = np.where(mask, 0.5, h.values)
    return new_histogram(1.0 - values, h.mass_floor)
