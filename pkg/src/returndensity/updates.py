"""Stochastic natural-gradient TD updates for the parametric return densities.

The update for the density at (s, a) after observing (r, s') is

    theta += (alpha / gamma) * F(theta)^-1 * E_g[score(theta, eta)]

where ``g`` is the properly normalised density of ``r + gamma * eta'`` with
``eta'`` drawn from the successor's target density.  For all three families the
expectation has a closed form, implemented in :func:`ng_direction`; the
quadrature path :func:`ng_update_numeric` evaluates the same expression by
brute force and serves as its oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ._accel import jit
from .densities import (
    SCALE_FLOOR,
    SKEW_MAX,
    SKEW_MIN,
    DensityParams,
    ModelKind,
    ParamTable,
    make_params,
)
from .quadrature import QuadratureConfig, integrate

GAUSSIAN, LAPLACE, SKEWED_LAPLACE = 0, 1, 2


# Scalar kernels (numba-compatible) ----------------------------------------------


@jit
def td_delta(current_central, target_central, reward, discount):
    return reward + discount * target_central - current_central


@jit
def ng_direction(kind, c0, c1, c2, t0, t1, t2, reward, discount):
    """Natural gradient for one target component, with ``alpha / gamma = 1``.

    ``c*`` are the current parameters, ``t*`` the successor's; the unused third
    slot is ignored for two-parameter families.
    """
    delta = reward + discount * t0 - c0
    if kind == GAUSSIAN:
        mu_ng = delta
        sd_ng = (delta * delta + discount * discount * t1 * t1 - c1 * c1) / (2.0 * c1)
        return mu_ng, sd_ng, 0.0
    big_b = discount * t1
    if kind == LAPLACE:
        b = c1
        if delta <= 0.0:
            m_ng = (-1.0 + math.exp(delta / big_b)) * b
        else:
            m_ng = (1.0 - math.exp(-delta / big_b)) * b
        b_ng = -b + abs(delta) + big_b * math.exp(-abs(delta) / big_b)
        return m_ng, b_ng, 0.0
    b, c, cp = c1, c2, t2
    k, kp = 1.0 - c, 1.0 - cp
    cross = big_b * (1.0 - 2.0 * cp) / (cp * kp)
    poly = 1.0 - 3.0 * c + 3.0 * c * c
    if delta <= 0.0:
        x = math.exp(cp * delta / big_b)
        m_ng = (-2.0 * b - k * cross - k * delta
                + kp / k * (2.0 * b + big_b * (1.0 - 2.0 * c) / cp) * x) / c
        b_ng = (-b * k - k * k * cross - k * k * delta
                + kp / k * (b * (1.0 - 2.0 * c) + big_b * poly / cp) * x) / c
        c_ng = (-b * k - k * k * cross - k * k * delta
                + kp * (b + big_b * (1.0 - 2.0 * c) / cp) * x) / b
    else:
        x = math.exp((cp - 1.0) * delta / big_b)
        m_ng = (2.0 * b - c * cross - c * delta
                - cp / c * (2.0 * b - big_b * (1.0 - 2.0 * c) / kp) * x) / k
        b_ng = (-b * c + c * c * cross + c * c * delta
                + cp / c * (b * (2.0 * c - 1.0) + big_b * poly / kp) * x) / k
        c_ng = (b * c - c * c * cross - c * c * delta
                + cp * (-b + big_b * (1.0 - 2.0 * c) / kp) * x) / b
    return m_ng, b_ng, c_ng


@jit
def fisher_times(kind, c1, c2, g0, g1, g2):
    """F(theta) @ g, used to turn a natural gradient back into an ordinary one."""
    if kind == GAUSSIAN:
        inv = 1.0 / (c1 * c1)
        return g0 * inv, 2.0 * g1 * inv, 0.0
    if kind == LAPLACE:
        inv = 1.0 / (c1 * c1)
        return g0 * inv, g1 * inv, 0.0
    b, c = c1, c2
    k = 1.0 - c
    f_bc = -(1.0 - 2.0 * c) / (b * c * k)
    f_cc = 1.0 / (c * c) + 1.0 / (k * k)
    return (c * k / (b * b) * g0 - g2 / b,
            g1 / (b * b) + f_bc * g2,
            -g0 / b + f_bc * g1 + f_cc * g2)


@jit
def apply_increment(kind, c0, c1, c2, step, g0, g1, g2, skew_lo=SKEW_MIN, skew_hi=SKEW_MAX):
    """theta + step * g, projected back onto the valid parameter region.

    ``skew_lo``/``skew_hi`` bound the skewness; agents may narrow the default interval.
    """
    n0 = c0 + step * g0
    n1 = c1 + step * g1
    if n1 < SCALE_FLOOR:
        n1 = SCALE_FLOOR
    n2 = c2
    if kind == SKEWED_LAPLACE:
        n2 = c2 + step * g2
        if n2 < skew_lo:
            n2 = skew_lo
        elif n2 > skew_hi:
            n2 = skew_hi
    return n0, n1, n2


@jit
def ng_batch(kind, current, target, reward, discount):
    """Row-wise :func:`ng_direction` over ``(n, 3)`` parameter arrays."""
    n = current.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        g = ng_direction(kind, current[i, 0], current[i, 1], current[i, 2],
                         target[i, 0], target[i, 1], target[i, 2], reward[i], discount[i])
        out[i, 0] = g[0]
        out[i, 1] = g[1]
        out[i, 2] = g[2]
    return out


# Object-level API ---------------------------------------------------------------------


Target = Tuple[Tuple[float, DensityParams], ...]


@dataclass(frozen=True)
class TdContext:
    """Everything one update needs: observed reward, schedules, current and target densities."""

    reward: float
    discount: float
    learning_rate: float
    current: DensityParams
    target: Target

    def __post_init__(self):
        target = tuple((float(w), p) for w, p in self.target)
        object.__setattr__(self, "target", target)
        if not target:
            raise ValueError("target mixture is empty")
        weights = np.array([w for w, _ in target])
        if np.any(weights < 0.0) or np.any(weights > 1.0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"target weights must be a probability vector, got {weights}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if any(p.kind is not self.current.kind for _, p in target):
            raise TypeError("target and current densities must share a model kind")

    @property
    def kind(self) -> ModelKind:
        return self.current.kind

    @property
    def step(self) -> float:
        return self.learning_rate / self.discount


def _padded(params: DensityParams) -> np.ndarray:
    out = np.zeros(3)
    arr = params.as_array()
    out[: arr.size] = arr
    return out


def natural_gradient(ctx: TdContext, gradient: str = "natural") -> np.ndarray:
    """Closed-form (natural or ordinary) gradient with ``alpha / gamma = 1``.

    For a mixture target the result is the weight-sum of per-component gradients.
    """
    kind = ctx.kind.code
    cur = _padded(ctx.current)
    total = np.zeros(3)
    for w, tgt in ctx.target:
        t = _padded(tgt)
        total += w * np.array(ng_direction(kind, cur[0], cur[1], cur[2],
                                           t[0], t[1], t[2], ctx.reward, ctx.discount))
    if gradient == "ordinary":
        total = np.array(fisher_times(kind, cur[1], cur[2], total[0], total[1], total[2]))
    elif gradient != "natural":
        raise ValueError(f"unknown gradient type {gradient!r}")
    return total[: ctx.kind.n_params]


def ng_update(ctx: TdContext, gradient: str = "natural") -> DensityParams:
    g = np.zeros(3)
    g[: ctx.kind.n_params] = natural_gradient(ctx, gradient)
    cur = _padded(ctx.current)
    new = apply_increment(ctx.kind.code, cur[0], cur[1], cur[2], ctx.step, g[0], g[1], g[2])
    return make_params(ctx.kind, new)


def _require(ctx: TdContext, kind: ModelKind):
    if ctx.kind is not kind:
        raise TypeError(f"expected a {kind.value} context, got {ctx.kind.value}")


def ng_update_gaussian(ctx: TdContext):
    _require(ctx, ModelKind.GAUSSIAN)
    return ng_update(ctx)


def ng_update_laplace(ctx: TdContext):
    _require(ctx, ModelKind.LAPLACE)
    return ng_update(ctx)


def ng_update_skewed_laplace(ctx: TdContext):
    _require(ctx, ModelKind.SKEWED_LAPLACE)
    return ng_update(ctx)


# Targets ---------------------------------------------------------------------------------


def build_target_offpolicy(table: ParamTable, next_state: int, q: float) -> Target:
    """Successor density of the action maximising Q-hat_q(s', .); ties go to the lowest index."""
    values = np.array([table[next_state, a].quantile(q) for a in range(table.n_actions)])
    best = int(np.argmax(values))
    return ((1.0, table[next_state, best]),)


def build_target_onpolicy(table: ParamTable, next_state: int, probabilities: Sequence[float]) -> Target:
    """Policy-weighted mixture of the successor densities."""
    probs = np.asarray(probabilities, dtype=float)
    if probs.shape != (table.n_actions,):
        raise ValueError(f"expected {table.n_actions} action probabilities, got shape {probs.shape}")
    if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {probs}")
    return tuple((float(p), table[next_state, a]) for a, p in enumerate(probs))


# Quadrature oracle ----------------------------------------------------------------------------


def _window(params: DensityParams, tail_mass: float):
    """Interval holding all but ``tail_mass`` of a density, plus its kink."""
    ln = math.log(1.0 / tail_mass)
    if params.kind is ModelKind.GAUSSIAN:
        half = params.sigma * math.sqrt(2.0 * ln)
        return params.mu - half, params.mu + half
    if params.kind is ModelKind.LAPLACE:
        return params.m - params.b * ln, params.m + params.b * ln
    return (params.m - params.b * ln / (1.0 - params.c), params.m + params.b * ln / params.c)


def _pushforward(params: DensityParams, reward: float, discount: float) -> DensityParams:
    """Only used to locate the integration window of g; g itself is evaluated pointwise."""
    arr = params.as_array().copy()
    arr[0] = reward + discount * arr[0]
    arr[1] = discount * arr[1]
    return make_params(params.kind, arr)


def fisher_information_numeric(params: DensityParams,
                               config: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """E[score score^T] under ``params`` by quadrature."""
    lo, hi = _window(params, config.tail_mass)

    def integrand(x):
        s = params.score(x)
        p = np.exp(params.log_pdf(x))
        return (s[:, None, :] * s[None, :, :] * p).reshape(s.shape[0] ** 2, -1)

    k = params.kind.n_params
    return integrate(integrand, lo, hi, [params.central], config).reshape(k, k)


def expected_score_numeric(ctx: TdContext, config: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Integral of g(eta) * score(current, eta) with g(eta) = (1/gamma) sum_k w_k p_k((eta - r)/gamma)."""
    r, gamma = ctx.reward, ctx.discount
    windows = [_window(_pushforward(p, r, gamma), config.tail_mass) for _, p in ctx.target]
    lo = min(w[0] for w in windows)
    hi = max(w[1] for w in windows)
    kinks = [ctx.current.central] + [r + gamma * p.central for _, p in ctx.target]

    def integrand(eta):
        g = np.zeros_like(eta)
        for w, p in ctx.target:
            g += w * np.exp(p.log_pdf((eta - r) / gamma))
        return ctx.current.score(eta) * (g / gamma)

    return integrate(integrand, lo, hi, kinks, config)


def natural_gradient_numeric(ctx: TdContext, gradient: str = "natural",
                             config: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    expected = expected_score_numeric(ctx, config)
    if gradient == "ordinary":
        return expected
    return np.linalg.solve(fisher_information_numeric(ctx.current, config), expected)


def ng_update_numeric(ctx: TdContext, config: QuadratureConfig = QuadratureConfig(),
                      gradient: str = "natural") -> DensityParams:
    g = np.zeros(3)
    g[: ctx.kind.n_params] = natural_gradient_numeric(ctx, gradient, config)
    cur = _padded(ctx.current)
    new = apply_increment(ctx.kind.code, cur[0], cur[1], cur[2], ctx.step, g[0], g[1], g[2])
    return make_params(ctx.kind, new)


# Natural-gradient curves ------------------------------------------------------------------------


_CURVE_COLUMNS = {
    ModelKind.GAUSSIAN: ("mu", "sigma"),
    ModelKind.LAPLACE: ("m", "b"),
    ModelKind.SKEWED_LAPLACE: ("m", "b", "c"),
}


@dataclass(frozen=True)
class NgCurve:
    kind: ModelKind
    columns: Tuple[str, ...]
    data: np.ndarray        # first column is delta

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.data:
            lines.append(",".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"


def ng_curve(kind, current: DensityParams, target: DensityParams,
             rewards: Sequence[float], discount: float) -> NgCurve:
    """Natural-gradient components (alpha / gamma = 1) as the reward, hence delta, varies."""
    kind = ModelKind.parse(kind)
    if current.kind is not kind or target.kind is not kind:
        raise TypeError("current and target must match the requested model kind")
    cur, tgt = _padded(current), _padded(target)
    rows = []
    for r in np.asarray(rewards, dtype=float):
        delta = td_delta(cur[0], tgt[0], r, discount)
        g = ng_direction(kind.code, cur[0], cur[1], cur[2], tgt[0], tgt[1], tgt[2], r, discount)
        rows.append([delta, *g[: kind.n_params]])
    columns = ("delta",) + tuple(f"ng_{name}" for name in _CURVE_COLUMNS[kind])
    return NgCurve(kind, columns, np.array(rows))
