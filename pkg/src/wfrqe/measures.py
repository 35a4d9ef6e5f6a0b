"""Bounded 1-D histograms and the generalized KL divergence.

Set embeddings are mass vectors in [0, 1]^d on a fixed uniform grid.  Only
the mass vector is stored; the grid itself never appears because every
downstream cost is parameterized by bin-index distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MASS_FLOOR = 1e-6


@dataclass(frozen=True)
class BoundedHistogram:
    """A mass vector with every entry in [mass_floor, 1].

    The floor keeps entries strictly positive so that transport scalings
    and their logarithms stay finite.
    """

    values: np.ndarray
    mass_floor: float = DEFAULT_MASS_FLOOR

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        self.values.setflags(write=False)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.d


def new_histogram(values, mass_floor: float = DEFAULT_MASS_FLOOR) -> BoundedHistogram:
    """Build a histogram, clamping entries into [mass_floor, 1].

    Raises ValueError on an empty vector or any non-finite entry.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"histogram needs a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("histogram entries must be finite")
    if not 0.0 < mass_floor <= 1.0:
        raise ValueError(f"mass_floor must lie in (0, 1], got {mass_floor}")
    return BoundedHistogram(np.clip(arr, mass_floor, 1.0), mass_floor)


def as_mass_array(h) -> np.ndarray:
    """Accept a BoundedHistogram or a plain array and return float64 values."""
    if isinstance(h, BoundedHistogram):
        return h.values
    return np.asarray(h, dtype=np.float64)


def total_mass(h) -> float:
    """Sum of all bin masses."""
    return float(as_mass_array(h).sum())


def generalized_kl(a, b) -> float:
    """KL divergence for unnormalized nonnegative vectors.

    Sum of a*log(a/b) - a + b with 0*log(0) = 0, and +inf whenever some
    b_i = 0 < a_i.  Always >= 0, and 0 iff a == b.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("generalized KL needs nonnegative inputs")
    if np.any((b == 0) & (a > 0)):
        return float("inf")
    pos = a > 0
    out = float(b.sum() - a.sum())
    if np.any(pos):
        ap = a[pos]
        out += float(np.sum(ap * np.log(ap / b[pos])))
    return out
