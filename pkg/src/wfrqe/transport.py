"""Entropic Wasserstein-Fisher-Rao scoring between bounded histograms.

Two interchangeable solvers are provided: a dense-kernel reference
(`dense_sinkhorn`) and a banded, block-diagonal convolution form
(`conv_sinkhorn`) that runs in O(omega * d) per iteration.  Both iterate
the same scaling updates

    phi <- [u / (K psi)]^(1/(1+eps)),   psi <- [v / (K phi)]^(1/(1+eps))

and agree elementwise up to floating-point noise.  All iterations run in
log domain: with small eps and floor-valued masses the scalings reach
exp(several thousand), far past float64 range, while every quantity the
objective needs (phi^(-eps), phi_i K_ij psi_j) stays bounded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .measures import BoundedHistogram, as_mass_array, generalized_kl

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransportConfig:
    """Hyperparameters of the transport score.

    epsilon : entropic regularization strength
    omega : window size; mass moves at most omega - 1 bins (beta = 1)
    beta : sub-grid radius correction in (1 - 1/(omega+1), 1]
    block_size : bins per diagonal block (a); at most one of block_size /
        block_count may be set, the other is derived from d at call time
    block_count : number of diagonal blocks (b)
    iterations : Sinkhorn iteration count L
    denom_floor : value substituted for a scaling denominator that is not
        strictly positive.  Legitimate small denominators are left alone:
        they cannot underflow in log domain, and clamping them would cap
        the duals and wreck convergence at small epsilon
    tol : optional early stop once the max log-dual change falls below it
    """

    epsilon: float
    omega: int
    beta: float = 1.0
    block_size: int | None = None
    block_count: int | None = None
    iterations: int = 10
    denom_floor: float = 1e-30
    tol: float | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (isinstance(self.omega, (int, np.integer)) and self.omega >= 1):
            raise ValueError(f"omega must be a positive integer, got {self.omega}")
        lo = 1.0 - 1.0 / (self.omega + 1)
        if not lo < self.beta <= 1.0:
            raise ValueError(f"beta must lie in ({lo}, 1], got {self.beta}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.denom_floor > 0:
            raise ValueError("denom_floor must be positive")
        if self.block_size is not None and self.block_count is not None:
            raise ValueError("set at most one of block_size / block_count")
        for name in ("block_size", "block_count"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val}")
        if self.block_size is not None and self.block_size < self.omega:
            raise ValueError(
                f"block_size {self.block_size} must be >= omega {self.omega}"
            )

    def blocks_for(self, d: int) -> tuple[int, int]:
        """Resolve (block_count b, block_size a) for histograms of length d."""
        if self.block_size is not None:
            a = self.block_size
            if d % a != 0:
                raise ValueError(f"d={d} is not divisible by block_size={a}")
            b = d // a
        elif self.block_count is not None:
            b = self.block_count
            if d % b != 0:
                raise ValueError(f"d={d} is not divisible by block_count={b}")
            a = d // b
        else:
            b, a = 1, d
        # With real blocks each must span the window; a single block may be
        # narrower than omega (the band just truncates at the boundary).
        if b > 1 and a < self.omega:
            raise ValueError(f"block size a={a} must be >= omega={self.omega}")
        return b, a


@dataclass(frozen=True)
class SinkhornState:
    """Converged (or truncated) dual scalings, stored in log domain."""

    log_phi: np.ndarray
    log_psi: np.ndarray
    iterations_run: int

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi)


# ---------------------------------------------------------------------------
# Kernels and costs
# ---------------------------------------------------------------------------


def _log_cos_band(k: np.ndarray, omega: int, beta: float) -> np.ndarray:
    """log cos(pi*beta*|k|/(2*omega)) inside the window, -inf at/past it.

    The window edge is decided by the exact condition beta*|k|/omega < 1,
    not by cos() reaching zero, which it never does in floating point.
    """
    k = np.abs(np.asarray(k, dtype=np.float64))
    inside = beta * k / omega < 1.0
    out = np.full(k.shape, -np.inf)
    out[inside] = np.log(np.cos(0.5 * np.pi * beta * k[inside] / omega))
    return out


def cost_matrix(d: int, omega: int, beta: float = 1.0) -> np.ndarray:
    """Transport cost -2*log cos(pi*beta*|i-j|/(2*omega)), +inf past the window."""
    if d < 1 or omega < 1:
        raise ValueError("d and omega must be >= 1")
    gaps = np.abs(np.arange(d)[:, None] - np.arange(d)[None, :])
    return -2.0 * _log_cos_band(gaps, omega, beta)


def blocked_cost_matrix(d: int, config: TransportConfig) -> np.ndarray:
    """Cost matrix with +inf added between different diagonal blocks."""
    b, a = config.blocks_for(d)
    C = cost_matrix(d, config.omega, config.beta)
    blocks = np.arange(d) // a
    C[blocks[:, None] != blocks[None, :]] = np.inf
    return C


def kernel_matrix(d: int, config: TransportConfig) -> np.ndarray:
    """Block-diagonal banded kernel exp(-C/eps)."""
    b, a = config.blocks_for(d)
    gaps = np.abs(np.arange(d)[:, None] - np.arange(d)[None, :])
    log_k = (2.0 / config.epsilon) * _log_cos_band(gaps, config.omega, config.beta)
    blocks = np.arange(d) // a
    log_k[blocks[:, None] != blocks[None, :]] = -np.inf
    return np.exp(log_k)


def _log_conv_kernel(config: TransportConfig) -> np.ndarray:
    ks = np.arange(-config.omega, config.omega + 1)
    return (2.0 / config.epsilon) * _log_cos_band(ks, config.omega, config.beta)


def conv_kernel(config: TransportConfig) -> np.ndarray:
    """Window weights H_k = cos(pi*beta*k/(2*omega))^(2/eps), k = -omega..omega."""
    return np.exp(_log_conv_kernel(config))


def kernel_total_mass(d: int, config: TransportConfig) -> float:
    """Sum of all kernel entries, computed from the band weights in O(omega)."""
    b, a = config.blocks_for(d)
    h = conv_kernel(config)
    ks = np.abs(np.arange(-config.omega, config.omega + 1))
    return float(b * np.sum(h * np.maximum(0, a - ks)))


# ---------------------------------------------------------------------------
# Log-domain primitives
# ---------------------------------------------------------------------------


def _log_conv_lse(x: np.ndarray, log_h: np.ndarray) -> np.ndarray:
    """log of (H * exp(x)) along the last axis with zero padding.

    x holds log-values; entries outside the array contribute nothing.
    """
    w = (log_h.shape[0] - 1) // 2
    a = x.shape[-1]
    parts = np.full((2 * w + 1,) + x.shape, -np.inf)
    for idx, k in enumerate(range(-w, w + 1)):
        lh = log_h[idx]
        if not np.isfinite(lh):
            continue
        lo, hi = max(0, -k), a - max(0, k)
        if hi <= lo:
            continue
        parts[idx, ..., lo:hi] = x[..., lo + k : hi + k] + lh
    m = parts[w]  # k = 0 term (log H_0 = 0) dominates or ties; always finite
    m = np.maximum(m, parts.max(axis=0))
    return m + np.log(np.exp(parts - m).sum(axis=0))


def _log_conv_vjp(
    x: np.ndarray, y: np.ndarray, y_bar: np.ndarray, log_h: np.ndarray
) -> np.ndarray:
    """Adjoint of y = _log_conv_lse(x): x_bar from y_bar.

    Each weight exp(log_h_k + x_j - y_i) is <= 1 by construction, so the
    backward pass cannot overflow even when the log-duals are huge.
    """
    w = (log_h.shape[0] - 1) // 2
    a = x.shape[-1]
    x_bar = np.zeros(np.broadcast_shapes(x.shape, y.shape), dtype=np.float64)
    for idx, k in enumerate(range(-w, w + 1)):
        lh = log_h[idx]
        if not np.isfinite(lh):
            continue
        lo, hi = max(0, -k), a - max(0, k)
        if hi <= lo:
            continue
        x_bar[..., lo + k : hi + k] += y_bar[..., lo:hi] * np.exp(
            lh + x[..., lo + k : hi + k] - y[..., lo:hi]
        )
    return x_bar


def _dense_log_matvec(log_k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log of (K @ exp(x)) for a dense log-kernel matrix.

    A row whose kernel entries are all zero yields -inf (handled by the
    caller's denominator guard), not NaN.
    """
    t = log_k + x[..., None, :]
    m = t.max(axis=-1)
    dead = ~np.isfinite(m)
    if np.any(dead):
        m = np.where(dead, 0.0, m)
        with np.errstate(divide="ignore"):
            out = m + np.log(np.exp(t - m[..., None]).sum(axis=-1))
        return np.where(dead, -np.inf, out)
    return m + np.log(np.exp(t - m[..., None]).sum(axis=-1))


def _check_positive_masses(arr: np.ndarray, name: str) -> None:
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must hold strictly positive finite masses")


# ---------------------------------------------------------------------------
# Sinkhorn solvers
# ---------------------------------------------------------------------------


def dense_sinkhorn(
    u,
    v,
    K: np.ndarray,
    epsilon: float,
    iterations: int,
    denom_floor: float = 1e-30,
    tol: float | None = None,
) -> SinkhornState:
    """Reference solver against an explicit kernel matrix."""
    uu, vv = as_mass_array(u), as_mass_array(v)
    K = np.asarray(K, dtype=np.float64)
    d = uu.shape[0]
    if vv.shape[0] != d or K.shape != (d, d):
        raise ValueError(f"shape mismatch: u {uu.shape}, v {vv.shape}, K {K.shape}")
    _check_positive_masses(uu, "u")
    _check_positive_masses(vv, "v")
    with np.errstate(divide="ignore"):
        log_k = np.log(K)
    lu, lv = np.log(uu), np.log(vv)
    lfloor = np.log(denom_floor)
    scale = 1.0 / (1.0 + epsilon)

    log_psi = np.zeros(d)
    log_phi = np.zeros(d)
    ran = 0
    for _ in range(iterations):
        prev_phi, prev_psi = log_phi, log_psi
        s = _dense_log_matvec(log_k, log_psi)
        log_phi = (lu - np.where(np.isfinite(s), s, lfloor)) * scale
        r = _dense_log_matvec(log_k, log_phi)
        log_psi = (lv - np.where(np.isfinite(r), r, lfloor)) * scale
        ran += 1
        if tol is not None and ran > 1:
            delta = max(
                np.abs(log_phi - prev_phi).max(), np.abs(log_psi - prev_psi).max()
            )
            if delta < tol:
                break
    return SinkhornState(log_phi, log_psi, ran)


def _conv_sinkhorn_core(
    lu: np.ndarray,
    lv: np.ndarray,
    config: TransportConfig,
    want_cache: bool = False,
):
    """Batched log-domain iteration on (..., b, a) arrays."""
    log_h = _log_conv_kernel(config)
    lfloor = np.log(config.denom_floor)
    scale = 1.0 / (1.0 + config.epsilon)
    shape = np.broadcast_shapes(lu.shape, lv.shape)

    log_psi = np.zeros(shape)
    log_phi = np.zeros(shape)
    steps = [] if want_cache else None
    ran = 0
    for _ in range(config.iterations):
        prev_phi, prev_psi = log_phi, log_psi
        s_raw = _log_conv_lse(log_psi, log_h)
        log_phi = (lu - np.where(np.isfinite(s_raw), s_raw, lfloor)) * scale
        r_raw = _log_conv_lse(log_phi, log_h)
        log_psi = (lv - np.where(np.isfinite(r_raw), r_raw, lfloor)) * scale
        ran += 1
        if want_cache:
            steps.append((prev_psi, s_raw, log_phi, r_raw))
        if config.tol is not None and ran > 1:
            delta = max(
                np.abs(log_phi - prev_phi).max(), np.abs(log_psi - prev_psi).max()
            )
            if delta < config.tol:
                break
    return log_phi, log_psi, ran, steps


def _to_blocks(arr: np.ndarray, b: int, a: int) -> np.ndarray:
    return arr.reshape(arr.shape[:-1] + (b, a))


def conv_sinkhorn(u, v, config: TransportConfig) -> SinkhornState:
    """Banded block-diagonal solver; O(omega * d) per iteration."""
    uu, vv = as_mass_array(u), as_mass_array(v)
    if uu.shape != vv.shape or uu.ndim != 1:
        raise ValueError(f"shape mismatch: u {uu.shape} vs v {vv.shape}")
    _check_positive_masses(uu, "u")
    _check_positive_masses(vv, "v")
    d = uu.shape[0]
    b, a = config.blocks_for(d)
    lu = _to_blocks(np.log(uu), b, a)
    lv = _to_blocks(np.log(vv), b, a)
    log_phi, log_psi, ran, _ = _conv_sinkhorn_core(lu, lv, config)
    return SinkhornState(log_phi.reshape(d), log_psi.reshape(d), ran)


# ---------------------------------------------------------------------------
# Objectives and plans
# ---------------------------------------------------------------------------


def _score_from_logs(
    log_phi: np.ndarray,
    log_psi: np.ndarray,
    u_blocks: np.ndarray,
    v_blocks: np.ndarray,
    config: TransportConfig,
):
    """Score = <1 - phi^-eps, u> + <1 - psi^-eps, v> - eps * <phi (x) psi, K>.

    Returns per-batch-element scores plus the intermediates the backward
    pass reuses.  All reductions run over the trailing (b, a) axes.
    """
    eps = config.epsilon
    log_h = _log_conv_kernel(config)
    e_phi = np.exp(-eps * log_phi)
    e_psi = np.exp(-eps * log_psi)
    c = _log_conv_lse(log_psi, log_h)
    plan_rows = np.exp(log_phi + c)
    score = (
        (u_blocks * (1.0 - e_phi)).sum(axis=(-2, -1))
        + (v_blocks * (1.0 - e_psi)).sum(axis=(-2, -1))
        - eps * plan_rows.sum(axis=(-2, -1))
    )
    return score, e_phi, e_psi, c, plan_rows


def dual_objective(state: SinkhornState, u, v, config: TransportConfig) -> float:
    """Entropic dual value at the given scalings.

    Evaluates <1 - phi^-eps, u> + <1 - psi^-eps, v> + eps<1 - phi (x) psi, K>
    via the window convolution, never materializing the outer product.  It
    vanishes at phi = psi = 1 and each Sinkhorn half-step ascends it.
    """
    uu, vv = as_mass_array(u), as_mass_array(v)
    d = uu.shape[0]
    b, a = config.blocks_for(d)
    score, *_ = _score_from_logs(
        _to_blocks(state.log_phi, b, a),
        _to_blocks(state.log_psi, b, a),
        _to_blocks(uu, b, a),
        _to_blocks(vv, b, a),
        config,
    )
    return float(score) + config.epsilon * kernel_total_mass(d, config)


def recover_plan(state: SinkhornState, d: int, config: TransportConfig) -> np.ndarray:
    """Transport plan diag(phi) K diag(psi); banded and block sparse."""
    if state.log_phi.shape[0] != d:
        raise ValueError(f"state has dim {state.log_phi.shape[0]}, expected {d}")
    b, a = config.blocks_for(d)
    gaps = np.abs(np.arange(d)[:, None] - np.arange(d)[None, :])
    log_k = (2.0 / config.epsilon) * _log_cos_band(gaps, config.omega, config.beta)
    blocks = np.arange(d) // a
    log_k[blocks[:, None] != blocks[None, :]] = -np.inf
    return np.exp(state.log_phi[:, None] + log_k + state.log_psi[None, :])


def primal_objective(
    P: np.ndarray, u, v, C: np.ndarray, epsilon: float, entropic: bool = False
) -> float:
    """Transport cost plus marginal divergences for an explicit plan.

    With `entropic` set, adds eps * sum(P log P - P + K) with K =
    exp(-C/eps); together with the cost term this equals eps * KL(P || K),
    whose minimizer is exactly the Sinkhorn plan, so the value is
    dual-attainable at the optimum.
    """
    P = np.asarray(P, dtype=np.float64)
    uu, vv = as_mass_array(u), as_mass_array(v)
    d = uu.shape[0]
    if P.shape != (d, d) or C.shape != (d, d) or vv.shape[0] != d:
        raise ValueError("shape mismatch between plan, cost, and marginals")
    if np.any(P < 0):
        raise ValueError("plan entries must be nonnegative")
    infeasible = (P > 0) & np.isinf(C)
    if np.any(infeasible):
        logger.warning(
            "plan places mass on %d infinite-cost cells", int(infeasible.sum())
        )
        return float("inf")
    finite = np.isfinite(C)
    value = float(np.sum(P[finite] * C[finite]))
    value += generalized_kl(P.sum(axis=1), uu)
    value += generalized_kl(P.sum(axis=0), vv)
    if entropic:
        K = np.zeros_like(C)
        K[finite] = np.exp(-C[finite] / epsilon)
        pos = P > 0
        plogp = float(np.sum(P[pos] * np.log(P[pos]))) if np.any(pos) else 0.0
        value += epsilon * (plogp - P.sum() + K.sum())
    return value


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def _batched_scores(U: np.ndarray, V: np.ndarray, config: TransportConfig) -> np.ndarray:
    """Scores for broadcastable stacks of row histograms (leading axis)."""
    d = U.shape[-1]
    if V.shape[-1] != d:
        raise ValueError(f"shape mismatch: {U.shape} vs {V.shape}")
    _check_positive_masses(U, "u")
    _check_positive_masses(V, "v")
    b, a = config.blocks_for(d)
    lu = _to_blocks(np.log(U), b, a)
    lv = _to_blocks(np.log(V), b, a)
    log_phi, log_psi, _, _ = _conv_sinkhorn_core(lu, lv, config)
    score, *_ = _score_from_logs(
        log_phi, log_psi, _to_blocks(U, b, a), _to_blocks(V, b, a), config
    )
    return np.atleast_1d(score)


def wfr_distance(u, v, config: TransportConfig) -> float:
    """Transport score after L convolution-Sinkhorn iterations.

    This is the dual objective with its input-independent constant
    eps * <1, K 1> removed: rankings are unchanged and the value converges
    to the unregularized closed-form distance as eps -> 0.  Symmetric in
    (u, v) once the duals have converged.
    """
    uu, vv = as_mass_array(u), as_mass_array(v)
    if uu.shape != vv.shape:
        raise ValueError(f"shape mismatch: u {uu.shape} vs v {vv.shape}")
    return float(_batched_scores(uu[None, :], vv[None, :], config)[0])


def wfr_distance_one_to_many(q, candidates, config: TransportConfig) -> np.ndarray:
    """Scores of q against each candidate; identical to one-at-a-time calls."""
    qq = as_mass_array(q)
    if isinstance(candidates, np.ndarray) and candidates.ndim == 2:
        stack = candidates.astype(np.float64, copy=False)
    else:
        cands = list(candidates)
        if not cands:
            return np.zeros(0)
        stack = np.stack([as_mass_array(c) for c in cands])
    if stack.shape[0] == 0:
        return np.zeros(0)
    return _batched_scores(qq[None, :], stack, config)


def single_dirac_wfr(
    u_mass: float, v_mass: float, bin_gap: int, omega: int, beta: float = 1.0
) -> float:
    """Closed-form score for two single-bin masses a gap apart.

    Minimizing p*C + KL(p||u) + KL(p||v) over the scalar plan mass p gives
    p* = sqrt(u*v) * exp(-C/2), hence u + v - 2*sqrt(u*v)*cos(theta) inside
    the window and plain u + v outside it.
    """
    if u_mass < 0 or v_mass < 0:
        raise ValueError("masses must be nonnegative")
    gap = abs(bin_gap)
    if beta * gap / omega >= 1.0:
        return float(u_mass + v_mass)
    cos_term = np.cos(0.5 * np.pi * beta * gap / omega)
    return float(u_mass + v_mass - 2.0 * np.sqrt(u_mass * v_mass) * cos_term)


# ---------------------------------------------------------------------------
# Gradients of the score (used by the training module)
# ---------------------------------------------------------------------------


def _batched_scores_with_grads(
    U: np.ndarray, V: np.ndarray, config: TransportConfig, mode: str = "unrolled"
):
    """Scores plus per-pair gradients d(score)/dU and d(score)/dV.

    `unrolled` back-propagates through every iteration; `danskin` holds the
    converged duals fixed, which is exact in the limit of large L.
    """
    if mode not in ("unrolled", "danskin"):
        raise ValueError(f"unknown grad mode {mode!r}")
    d = U.shape[-1]
    b, a = config.blocks_for(d)
    eps = config.epsilon
    scale = 1.0 / (1.0 + eps)
    log_h = _log_conv_kernel(config)
    lfloor = np.log(config.denom_floor)

    u_blocks = _to_blocks(np.broadcast_to(U, np.broadcast_shapes(U.shape, V.shape)), b, a)
    v_blocks = _to_blocks(np.broadcast_to(V, np.broadcast_shapes(U.shape, V.shape)), b, a)
    lu, lv = np.log(u_blocks), np.log(v_blocks)
    log_phi, log_psi, _, steps = _conv_sinkhorn_core(lu, lv, config, want_cache=True)
    score, e_phi, e_psi, c, plan_rows = _score_from_logs(
        log_phi, log_psi, u_blocks, v_blocks, config
    )

    grad_u = 1.0 - e_phi
    grad_v = 1.0 - e_psi
    if mode == "unrolled":
        lu_bar = np.zeros_like(log_phi)
        lv_bar = np.zeros_like(log_phi)
        lphi_bar = eps * u_blocks * e_phi - eps * plan_rows
        lpsi_bar = eps * v_blocks * e_psi + _log_conv_vjp(
            log_psi, c, -eps * plan_rows, log_h
        )
        for prev_psi, s_raw, lphi_t, r_raw in reversed(steps):
            lv_bar += lpsi_bar * scale
            r_bar = np.where(np.isfinite(r_raw), -lpsi_bar * scale, 0.0)
            lphi_bar = lphi_bar + _log_conv_vjp(lphi_t, r_raw, r_bar, log_h)
            lu_bar += lphi_bar * scale
            s_bar = np.where(np.isfinite(s_raw), -lphi_bar * scale, 0.0)
            lpsi_bar = _log_conv_vjp(prev_psi, s_raw, s_bar, log_h)
            lphi_bar = np.zeros_like(lphi_bar)
        grad_u = grad_u + lu_bar / u_blocks
        grad_v = grad_v + lv_bar / v_blocks

    flat = (-1, d) if grad_u.ndim > 2 else (d,)
    return np.atleast_1d(score), grad_u.reshape(flat), grad_v.reshape(flat)
