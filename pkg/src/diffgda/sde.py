"""Variance-exploding diffusion machinery: geometric noise schedule,
closed-form forward perturbation on a node subset, analytic denoising
targets, guided Euler-Maruyama reverse steps, and adjacency quantization.

The schedule is dx = sigma(t) * sqrt(2 log(sigma_max/sigma_min)) dw with
sigma(t) = sigma_min * (sigma_max/sigma_min)^t on t in (0, 1], so the
marginal variance from 0 is sigma_min^2 * ((sigma_max/sigma_min)^(2t) - 1).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graphs import AugmentedGraph

Array = np.ndarray

# Binary adjacency is mapped 0 -> 0, 1 -> ADJ_SCALE before diffusion so the
# quantization threshold sits at the midpoint and an untouched graph
# round-trips exactly.
ADJ_SCALE = 6.0
QUANT_THRESHOLD = 3.0

# Training-time floor for sampled diffusion times; the denoising target's
# 1/Var(t) factor is singular at t = 0.
EPS_T = 1e-3


class DivergenceError(RuntimeError):
    """Non-finite values surfaced during diffusion or training."""


@dataclass(frozen=True)
class VeSchedule:
    sigma_min: float = 0.001
    sigma_max: float = 0.01
    t_steps: int = 50

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.t_steps < 1:
            raise ValueError("t_steps must be at least 1")

    @property
    def ratio(self) -> float:
        return self.sigma_max / self.sigma_min


def _check_t(t: float):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t = {t} outside [0, 1]")


def sigma(s: VeSchedule, t: float) -> float:
    _check_t(t)
    return s.sigma_min * s.ratio ** t


def marginal_var(s: VeSchedule, t: float) -> float:
    """Variance accumulated by the forward process from 0 to t."""
    _check_t(t)
    return s.sigma_min ** 2 * (s.ratio ** (2.0 * t) - 1.0)


def transition_var(s: VeSchedule, t_hi: float, t_lo: float) -> float:
    """Variance accumulated between two times (t_lo < t_hi)."""
    _check_t(t_hi)
    _check_t(t_lo)
    if t_lo > t_hi:
        raise ValueError("t_lo must not exceed t_hi")
    return s.sigma_min ** 2 * (s.ratio ** (2.0 * t_hi) - s.ratio ** (2.0 * t_lo))


def g2(s: VeSchedule, t: float) -> float:
    """Squared diffusion coefficient d sigma^2(t)/dt."""
    return 2.0 * np.log(s.ratio) * sigma(s, t) ** 2


@dataclass
class DiffusionState:
    """Graph state at diffusion time t; entries outside `subset` stay clean."""

    xt: Array
    at: Array
    t: float
    subset: Array

    @property
    def n(self) -> int:
        return self.xt.shape[0]


def relaxed_adjacency(a01: Array) -> Array:
    """Map a binary adjacency onto the diffusion scale."""
    return ADJ_SCALE * a01


def select_subset(n: int, alpha: float, rng: np.random.Generator) -> Array:
    """Uniform sample of round(alpha * n) node indices, sorted."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha = {alpha} outside [0, 1]")
    size = int(np.floor(alpha * n + 0.5))
    if size == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def incident_pairs(n: int, subset: Array) -> tuple[Array, Array]:
    """Upper-triangle index pairs (u < v) with at least one endpoint selected."""
    sel = np.zeros(n, dtype=bool)
    sel[subset] = True
    mask = np.triu(sel[:, None] | sel[None, :], k=1)
    return np.nonzero(mask)


def perturb(g0: AugmentedGraph, t: float, subset: Array, s: VeSchedule,
            rng: np.random.Generator) -> DiffusionState:
    """Closed-form forward marginal at time t on the selected entries.

    Feature rows in the subset and adjacency entries incident to it gain
    sqrt(Var(t)) Gaussian noise (features drawn first, then the u < v
    adjacency entries in row-major order, mirrored to keep symmetry).
    """
    _check_t(t)
    n = g0.n
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size and (subset.min() < 0 or subset.max() >= n):
        raise IndexError("subset index out of range")
    xt = g0.xt.copy()
    at = g0.adjacency.copy()
    std = np.sqrt(marginal_var(s, t))
    if subset.size and std > 0.0:
        xt[subset] += std * rng.standard_normal((subset.size, xt.shape[1]))
        iu, iv = incident_pairs(n, subset)
        noise = std * rng.standard_normal(iu.size)
        at[iu, iv] += noise
        at[iv, iu] = at[iu, iv]
    return DiffusionState(xt, at, t, subset)


def score_target(x0: Array, xt: Array, t: float, s: VeSchedule) -> Array:
    """Gradient of the Gaussian transition log-density: -(xt - x0)/Var(t)."""
    if t <= 0.0:
        raise ValueError("score target undefined at t = 0 (zero variance)")
    _check_t(t)
    return -(np.asarray(xt) - np.asarray(x0)) / marginal_var(s, t)


def reverse_step(state: DiffusionState, dt: float, feat_score, adj_score,
                 feat_guide, adj_guide, s: VeSchedule,
                 rng: np.random.Generator) -> DiffusionState:
    """One guided Euler-Maruyama step backward in time.

    x_{t-dt} = x_t + g^2(t) (score + guide) dt + g(t) sqrt(dt) z, applied to
    the subset's feature rows and incident adjacency entries only; guide
    callbacks may be None for unguided sampling.
    """
    t = state.t
    if not 0.0 < dt <= t + 1e-12:
        raise ValueError(f"dt = {dt} exceeds remaining time t = {t}")
    gg = g2(s, t)
    gnoise = np.sqrt(gg)
    xt = state.xt.copy()
    at = state.at.copy()
    subset = state.subset
    if subset.size:
        fs = np.asarray(feat_score(state), dtype=np.float64)
        if not np.isfinite(fs[subset]).all():
            raise DivergenceError(f"non-finite feature score at t = {t:.6f}")
        drift = fs
        if feat_guide is not None:
            fg = np.asarray(feat_guide(state), dtype=np.float64)
            if not np.isfinite(fg[subset]).all():
                raise DivergenceError(f"non-finite feature guidance at t = {t:.6f}")
            drift = drift + fg
        z = rng.standard_normal((subset.size, xt.shape[1]))
        xt[subset] += gg * drift[subset] * dt + gnoise * np.sqrt(dt) * z

        iu, iv = incident_pairs(state.n, subset)
        ascore = np.asarray(adj_score(state), dtype=np.float64)
        if not np.isfinite(ascore[iu, iv]).all():
            raise DivergenceError(f"non-finite adjacency score at t = {t:.6f}")
        adrift = ascore
        if adj_guide is not None:
            ag = np.asarray(adj_guide(state), dtype=np.float64)
            if not np.isfinite(ag[iu, iv]).all():
                raise DivergenceError(f"non-finite adjacency guidance at t = {t:.6f}")
            adrift = adrift + ag
        za = rng.standard_normal(iu.size)
        at[iu, iv] += gg * adrift[iu, iv] * dt + gnoise * np.sqrt(dt) * za
        at[iv, iu] = at[iu, iv]
    return DiffusionState(xt, at, max(t - dt, 0.0), subset)


def quantize_adjacency(at: Array) -> Array:
    """Threshold relaxed adjacency entries to {0, 1}; diagonal forced to 0."""
    at = np.asarray(at, dtype=np.float64)
    if not np.isfinite(at).all():
        raise ValueError("non-finite adjacency entries")
    if not np.array_equal(at, at.T):
        raise ValueError("adjacency must be symmetric")
    out = (at >= QUANT_THRESHOLD).astype(np.float64)
    np.fill_diagonal(out, 0.0)
    return out
