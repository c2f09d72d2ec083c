"""Randomised closed-form vs quadrature checks, shared by the CLI and the test suite."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import bellman, updates
from .densities import ModelKind, make_params
from .mdp import Deterministic, TabularMdp
from .quadrature import QuadratureConfig

REL_TOL = 1e-5
FLOOR = 1e-3       # relative errors are taken against max(|numeric|, FLOOR * parameter unit)


def random_params(kind: ModelKind, rng: np.random.Generator):
    central = rng.uniform(-5.0, 5.0)
    scale = rng.uniform(0.2, 3.0)
    if kind is ModelKind.SKEWED_LAPLACE:
        return make_params(kind, [central, scale, rng.uniform(0.05, 0.95)])
    return make_params(kind, [central, scale])


def random_context(kind: ModelKind, rng: np.random.Generator) -> updates.TdContext:
    """A TD context with a single target two times out of three, else a 2-3 component mixture."""
    n_targets = 1 if rng.random() < 2.0 / 3.0 else int(rng.integers(2, 4))
    weights = rng.dirichlet(np.ones(n_targets)) if n_targets > 1 else np.ones(1)
    target = [(float(w), random_params(kind, rng)) for w in weights]
    return updates.TdContext(reward=float(rng.uniform(-5.0, 5.0)), discount=float(rng.uniform(0.5, 0.99)),
                             learning_rate=0.1, current=random_params(kind, rng), target=target)


def relative_error(closed: np.ndarray, numeric: np.ndarray, ctx: updates.TdContext) -> np.ndarray:
    unit = np.full(closed.shape, ctx.current.scale)
    if ctx.kind is ModelKind.SKEWED_LAPLACE:
        unit[2] = 1.0
    return np.abs(closed - numeric) / np.maximum(np.abs(numeric), FLOOR * unit)


@dataclass
class ModelReport:
    kind: ModelKind
    n_cases: int
    worst: float
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_updates(kind: ModelKind, n_cases: int, seed: int,
                  config: QuadratureConfig = QuadratureConfig(), tol: float = REL_TOL) -> ModelReport:
    rng = np.random.default_rng([seed, kind.code])
    report = ModelReport(kind, n_cases, 0.0)
    for i in range(n_cases):
        ctx = random_context(kind, rng)
        closed = updates.natural_gradient(ctx)
        numeric = updates.natural_gradient_numeric(ctx, config=config)
        err = float(relative_error(closed, numeric, ctx).max())
        if not math.isfinite(err):
            err = math.inf
        report.worst = max(report.worst, err)
        if err > tol:
            report.failures.append(
                f"{kind.value} case {i}: relative error {err:.3e}\n"
                f"  closed  = {closed.tolist()}\n  numeric = {numeric.tolist()}\n  context = {ctx!r}")
    return report


def random_mdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2,
               discount: float = 0.9) -> TabularMdp:
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, (n_states, n_actions, n_states))
    specs = {(s, a, t): Deterministic(float(r[s, a, t]))
             for s in range(n_states) for a in range(n_actions) for t in range(n_states)}
    return TabularMdp(p, specs, discount)


@dataclass
class FixedPointReport:
    n_cases: int
    worst_bins: float
    max_iterations: int
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_fixed_points(n_cases: int, seed: int, n_bins: int = 2001, tol: float = 1e-8) -> FixedPointReport:
    """Grid fixed-point means against the linear Bellman solution on random 3-state MDPs."""
    rng = np.random.default_rng([seed, 99])
    report = FixedPointReport(n_cases, 0.0, 0)
    for i in range(n_cases):
        gamma = float(rng.uniform(0.5, 0.95))
        mdp = random_mdp(rng, discount=gamma)
        policy = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        p_sa = mdp.transition.reshape(-1, mdp.n_states)
        m = (p_sa[:, :, None] * policy[None]).reshape(p_sa.shape[0], -1)
        exact = np.linalg.solve(np.eye(m.shape[0]) - gamma * m, mdp.expected_reward().ravel())
        try:
            table = bellman.iterate_to_fixed_point(mdp, policy, config=bellman.GridConfig(n_bins=n_bins),
                                                   tol=tol)
        except RuntimeError as exc:
            report.failures.append(f"fixed point case {i} (gamma={gamma:.4f}): {exc}")
            continue
        bins = float(np.abs(table.means().ravel() - exact).max() / table.width)
        report.worst_bins = max(report.worst_bins, bins)
        report.max_iterations = max(report.max_iterations, table.iterations)
        if bins > 2.0:
            report.failures.append(f"fixed point case {i} (gamma={gamma:.4f}): means off by {bins:.3f} bins")
    return report


def run_all(n_cases: int = 100, seed: int = 0, n_fixed_points: int = 3) -> Dict[str, object]:
    out: Dict[str, object] = {kind.value: check_updates(kind, n_cases, seed) for kind in ModelKind}
    out["bellman"] = check_fixed_points(n_fixed_points, seed)
    return out
