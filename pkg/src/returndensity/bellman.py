"""Grid densities and the exact distributional Bellman operator for small MDPs.

This is a ground-truth oracle: return densities are stored as bin masses on a
shared uniform grid and pushed through eta = r + gamma * eta'.  Two
discretisations of the change of variables are available:

``split``
    each bin's mass moves to ``r + gamma * center`` and is divided linearly
    between the two nearest bins.  Mass and mean are conserved exactly.
``interpolate``
    the new density at each bin center is ``(1/gamma) old((eta - r)/gamma)``
    with the old density linearly interpolated between centers, then
    renormalised.

Stochastic rewards are discretised on the grid spacing and applied by
convolution, so both schemes cost one FFT per (successor, reward) pair.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .densities import DensityParams, pdf
from .mdp import Deterministic, RewardSpec, TabularMdp

MASS_TOL = 1e-9


class SupportOverflowError(ValueError):
    """Pushforward mass left the grid; ``required`` is the support that would hold it."""

    def __init__(self, message: str, required: Tuple[float, float]):
        super().__init__(message)
        self.required = required


@dataclass(frozen=True)
class GridConfig:
    n_bins: int = 4001
    lo: Optional[float] = None          # None -> derived from the reward range
    hi: Optional[float] = None
    margin: float = 0.05                # fraction of the derived span added on each side
    reward_coverage: float = 1.0 - 1e-8
    overflow_tol: float = 1e-6
    scheme: str = "split"

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")
        if self.scheme not in ("split", "interpolate"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.reward_coverage <= 1.0:
            raise ValueError("reward_coverage must lie in (0, 1]")


def _centers(lo, hi, n):
    width = (hi - lo) / n
    return lo + width * (np.arange(n) + 0.5)


@dataclass
class GridDensity:
    support_lo: float
    support_hi: float
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.ndim != 1 or self.mass.size < 1:
            raise ValueError("mass must be a non-empty vector")
        if not self.support_hi > self.support_lo:
            raise ValueError("support_hi must exceed support_lo")

    @property
    def n_bins(self) -> int:
        return self.mass.size

    @property
    def width(self) -> float:
        return (self.support_hi - self.support_lo) / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return _centers(self.support_lo, self.support_hi, self.n_bins)

    def validate(self):
        if np.any(self.mass < 0.0):
            raise ValueError("negative bin mass")
        total = self.mass.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} differs from 1")

    @classmethod
    def point_mass(cls, lo, hi, n_bins, x) -> "GridDensity":
        width = (hi - lo) / n_bins
        j = int(math.floor((x - lo) / width))
        if not 0 <= j < n_bins:
            raise ValueError(f"{x} lies outside [{lo}, {hi})")
        mass = np.zeros(n_bins)
        mass[j] = 1.0
        return cls(lo, hi, mass)

    @classmethod
    def from_params(cls, lo, hi, n_bins, params: DensityParams) -> "GridDensity":
        """Discretise a parametric density by cdf differences over the bin edges."""
        edges = np.linspace(lo, hi, n_bins + 1)
        mass = np.diff(params.cdf(edges))
        return cls(lo, hi, mass / mass.sum())


@dataclass
class ConditionalGridTable:
    """One grid density per (state, action) on a shared grid; ``mass`` is (S, A, n_bins)."""

    support_lo: float
    support_hi: float
    mass: np.ndarray
    iterations: int = 0
    truncated_mass: float = 0.0        # reward mass dropped outside the quadrature window
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.ndim != 3:
            raise ValueError("mass must have shape (S, A, n_bins)")

    @property
    def n_bins(self) -> int:
        return self.mass.shape[2]

    @property
    def width(self) -> float:
        return (self.support_hi - self.support_lo) / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return _centers(self.support_lo, self.support_hi, self.n_bins)

    def __getitem__(self, key) -> GridDensity:
        s, a = key
        return GridDensity(self.support_lo, self.support_hi, self.mass[s, a].copy())

    def validate(self):
        if np.any(self.mass < 0.0):
            raise ValueError("negative bin mass")
        totals = self.mass.sum(axis=2)
        if np.any(np.abs(totals - 1.0) > MASS_TOL):
            raise ValueError(f"total masses deviate from 1 by up to {np.abs(totals - 1).max():.3e}")

    def means(self) -> np.ndarray:
        return self.mass @ self.centers

    @classmethod
    def filled(cls, n_states, n_actions, density: GridDensity) -> "ConditionalGridTable":
        mass = np.broadcast_to(density.mass, (n_states, n_actions, density.n_bins)).copy()
        return cls(density.support_lo, density.support_hi, mass)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("state,action,bin_center,mass\n")
        centers = self.centers
        for s in range(self.mass.shape[0]):
            for a in range(self.mass.shape[1]):
                for x, m in zip(centers, self.mass[s, a]):
                    buf.write(f"{s},{a},{format(float(x), '.17g')},{format(float(m), '.17g')}\n")
        return buf.getvalue()


# Reward discretisation ---------------------------------------------------------------


def _tails(spec: RewardSpec, coverage: float) -> Tuple[float, float]:
    if isinstance(spec, Deterministic):
        return spec.value, spec.value
    tail = 0.5 * (1.0 - coverage)
    if tail <= 0.0:
        raise ValueError("stochastic rewards need reward_coverage < 1")
    return float(spec.ppf(tail)), float(spec.ppf(1.0 - tail))


def reward_pmf(spec: RewardSpec, width: float, coverage: float) -> Tuple[float, np.ndarray, float]:
    """Reward masses on a lattice ``r0 + k * width``.

    Returns ``(r0, weights, truncated)`` where ``truncated`` is the reward mass
    outside the central ``coverage`` window (dropped before renormalising).
    """
    if isinstance(spec, Deterministic):
        return float(spec.value), np.ones(1), 0.0
    lo, hi = _tails(spec, coverage)
    n = max(1, int(math.ceil((hi - lo) / width)))
    r0 = lo + 0.5 * width
    edges = lo + width * np.arange(n + 1)
    weights = np.diff(spec.cdf(edges))
    kept = weights.sum()
    return r0, weights / kept, float(max(0.0, 1.0 - kept))


def default_support(mdp: TabularMdp, config: GridConfig = GridConfig()) -> Tuple[float, float]:
    """Grid bounds covering every attainable return of the (truncated) reward range."""
    gamma = mdp.discount
    if not 0.0 < gamma < 1.0:
        raise ValueError("the Bellman oracle needs a discount in (0, 1)")
    r_lo, r_hi = 0.0, 0.0
    for spec in mdp.reward_spec.values():
        lo, hi = _tails(spec, config.reward_coverage)
        r_lo, r_hi = min(r_lo, lo), max(r_hi, hi)
    lo, hi = r_lo / (1.0 - gamma), r_hi / (1.0 - gamma)
    pad = config.margin * max(hi - lo, 1.0)
    return (config.lo if config.lo is not None else lo - pad,
            config.hi if config.hi is not None else hi + pad)


# Operator --------------------------------------------------------------------------------


def _shift_split(mass, centers, lo, width, r0, gamma):
    """Move every bin to r0 + gamma * center and split it between its two nearest bins.

    Returns an array indexed from ``offset`` (may extend beyond the grid).
    """
    f = (r0 + gamma * centers - lo) / width - 0.5
    j = np.floor(f)
    frac = f - j
    snap = np.abs(frac - np.rint(frac)) < 1e-9
    j = np.where(snap, np.rint(f), j)
    frac = np.where(snap, 0.0, frac)
    j = j.astype(np.int64)
    offset = min(int(j.min()), 0)
    size = max(int(j.max()) + 2, mass.size) - offset
    out = np.bincount(j - offset, weights=mass * (1.0 - frac), minlength=size)
    out += np.bincount(j + 1 - offset, weights=mass * frac, minlength=size)
    return out[:size], offset


def _shift_interpolate(mass, centers, lo, width, r0, gamma):
    """Backward change of variables: density at each target center read off by interpolation."""
    dens = mass / width
    # cover every bin whose preimage can land on the old support
    lo_t = r0 + gamma * (centers[0] - width)
    hi_t = r0 + gamma * (centers[-1] + width)
    first = int(math.floor((lo_t - lo) / width)) - 1
    last = int(math.ceil((hi_t - lo) / width)) + 1
    offset = min(first, 0)
    idx = np.arange(offset, max(last, mass.size))
    eta = lo + width * (idx + 0.5)
    pre = (eta - r0) / gamma
    vals = np.interp(pre, centers, dens, left=0.0, right=0.0) * width / gamma
    return vals, offset


def _outside(vals, offset, n):
    total = vals.sum()
    if total <= 0.0:
        return 0.0
    inside = vals[-offset:-offset + n].sum()
    return float((total - inside) / total)


def _pushforward(mass, centers, lo, width, r0, weights, gamma, scheme):
    """Pushforward of one successor density; returns (values, offset, escaped fraction).

    The escaped fraction always comes from the mass-conserving split map, which
    tracks where the mass actually goes.
    """
    split, offset = _shift_split(mass, centers, lo, width, r0, gamma)
    if weights.size > 1:
        split = np.maximum(signal.fftconvolve(split, weights), 0.0)
    escaped = _outside(split, offset, mass.size)
    if scheme == "split":
        return split, offset, escaped
    vals, offset = _shift_interpolate(mass, centers, lo, width, r0, gamma)
    if weights.size > 1:
        vals = np.maximum(signal.fftconvolve(vals, weights), 0.0)
    return vals, offset, escaped


def apply_bellman_operator(table: ConditionalGridTable, mdp: TabularMdp, policy,
                           discount: Optional[float] = None,
                           config: GridConfig = GridConfig()) -> ConditionalGridTable:
    """One application of the distributional Bellman operator under ``policy`` (S, A)."""
    gamma = mdp.discount if discount is None else float(discount)
    if not 0.0 < gamma < 1.0:
        raise ValueError("the Bellman oracle needs a discount in (0, 1)")
    policy = np.asarray(policy, dtype=float)
    n_s, n_a, n = table.mass.shape
    if policy.shape != (n_s, n_a) or (n_s, n_a) != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy, table and MDP shapes disagree")
    lo, width, centers = table.support_lo, table.width, table.centers
    mix = np.einsum("sa,san->sn", policy, table.mass)

    cache: Dict[tuple, tuple] = {}
    truncated = 0.0
    out = np.zeros_like(table.mass)
    for s in range(n_s):
        for a in range(n_a):
            escaped = 0.0
            lo_need, hi_need = table.support_lo, table.support_hi
            for s2 in np.flatnonzero(mdp.transition[s, a]):
                p = mdp.transition[s, a, s2]
                spec = mdp.reward(s, a, int(s2))
                key = (int(s2), spec)
                if key not in cache:
                    r0, weights, trunc = reward_pmf(spec, width, config.reward_coverage)
                    cache[key] = _pushforward(mix[s2], centers, lo, width, r0, weights, gamma,
                                              config.scheme) + (trunc,)
                vals, offset, esc, trunc = cache[key]
                truncated = max(truncated, trunc)
                inside = vals[-offset:-offset + n]
                out[s, a, :inside.size] += p * inside
                escaped += p * esc
                nz = np.flatnonzero(vals > 1e-12)
                if nz.size:
                    lo_need = min(lo_need, lo + width * (nz[0] + offset))
                    hi_need = max(hi_need, lo + width * (nz[-1] + offset + 1))
            total = out[s, a].sum()
            if escaped > config.overflow_tol or total <= 0.0:
                raise SupportOverflowError(
                    f"pushforward mass {escaped:.3e} escaped the grid at (s={s}, a={a}); "
                    f"extend the support to at least [{lo_need:.6g}, {hi_need:.6g}]",
                    (lo_need, hi_need))
            out[s, a] /= total
    return ConditionalGridTable(table.support_lo, table.support_hi, out,
                                table.iterations + 1, truncated)


def linear_q(mdp: TabularMdp, policy, discount: Optional[float] = None) -> np.ndarray:
    """Q^pi from the linear Bellman equation (needs finite reward means)."""
    gamma = mdp.discount if discount is None else float(discount)
    policy = np.asarray(policy, dtype=float)
    n_s, n_a = mdp.n_states, mdp.n_actions
    p_sa = mdp.transition.reshape(n_s * n_a, n_s)
    # (s, a) -> (s', a') transition under the policy
    m = (p_sa[:, :, None] * policy[None, :, :]).reshape(n_s * n_a, n_s * n_a)
    r = mdp.expected_reward().ravel()
    return np.linalg.solve(np.eye(n_s * n_a) - gamma * m, r).reshape(n_s, n_a)


def iterate_to_fixed_point(mdp: TabularMdp, policy, discount: Optional[float] = None,
                           config: GridConfig = GridConfig(), tol: float = 1e-8,
                           margin: int = 5, init: Optional[ConditionalGridTable] = None
                           ) -> ConditionalGridTable:
    """Apply the operator until the sup-norm change of bin masses drops below ``tol``.

    Without ``init`` every (s, a) starts as a point mass at its expected return,
    so the iteration only has to resolve the shape.  Raises RuntimeError after
    ``ceil(log(tol) / log(gamma)) + margin`` sweeps.
    """
    gamma = mdp.discount if discount is None else float(discount)
    if not 0.0 < gamma < 1.0:
        raise ValueError("the Bellman oracle needs a discount in (0, 1)")
    policy = np.asarray(policy, dtype=float)
    if init is None:
        lo, hi = default_support(mdp, config)
        q = linear_q(mdp, policy, gamma)
        mass = np.zeros((mdp.n_states, mdp.n_actions, config.n_bins))
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                mass[s, a] = GridDensity.point_mass(lo, hi, config.n_bins, q[s, a]).mass
        table = ConditionalGridTable(lo, hi, mass)
    else:
        table = init
    bound = int(math.ceil(math.log(tol) / math.log(gamma))) + margin
    for _ in range(bound):
        new = apply_bellman_operator(table, mdp, policy, gamma, config)
        change = float(np.abs(new.mass - table.mass).max())
        new.history = table.history + [change]
        table = new
        if change < tol:
            return table
    raise RuntimeError(f"no fixed point within {bound} sweeps (last change {change:.3e})")


# Diagnostics ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class GridStats:
    mean: float
    variance: float
    quantiles: Dict[float, float]


def grid_quantile(density: GridDensity, q: float) -> float:
    """Invert the cumulative mass; mass is spread uniformly within each bin."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    cum = np.cumsum(density.mass)
    cum = cum / cum[-1]
    j = int(np.searchsorted(cum, q, side="left"))
    j = min(j, density.n_bins - 1)
    below = cum[j - 1] if j > 0 else 0.0
    inside = density.mass[j] / density.mass.sum()
    frac = (q - below) / inside if inside > 0.0 else 0.5
    return float(density.support_lo + density.width * (j + frac))


def grid_stats(density: GridDensity, quantiles: Sequence[float] = (0.01, 0.1, 0.3, 0.5)) -> GridStats:
    """Midpoint-rule moments and cumulative-mass quantiles."""
    p = density.mass / density.mass.sum()
    x = density.centers
    mean = float(p @ x)
    var = float(p @ (x - mean) ** 2)
    return GridStats(mean, var, {float(q): grid_quantile(density, q) for q in quantiles})


def kl_to_model(density: GridDensity, params: DensityParams) -> float:
    """Discrete KL(grid || model) with the model evaluated at bin centers."""
    p = density.mass / density.mass.sum()
    keep = p > 0.0
    model = pdf(params, density.centers[keep]) * density.width
    if np.any(model <= 0.0):
        return math.inf
    return float(max(0.0, np.sum(p[keep] * np.log(p[keep] / model))))


def natural_gradient_grid(params: DensityParams, density: GridDensity,
                          gradient: str = "natural") -> np.ndarray:
    """``F^-1 E_g[score]`` with ``g`` a grid density; zero when ``params`` is its KL projection."""
    p = density.mass / density.mass.sum()
    keep = p > 0.0
    expected = params.score(density.centers[keep]) @ p[keep]
    if gradient == "ordinary":
        return expected
    return np.linalg.solve(params.fisher_information(), expected)
