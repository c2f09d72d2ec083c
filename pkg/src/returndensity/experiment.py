"""Trial runner, Monte Carlo return statistics, aggregation and significance testing."""
from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as sps

from . import kernels
from .agents import AgentSpec, AgentState, PolicySpec, greedy_path, initial_state
from .mdp import TabularMdp

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.01, 0.1, 0.3, 0.5)
HORIZON_TOLERANCE = 1e-3


@dataclass(frozen=True)
class EvalConfig:
    n_rollouts: int = 100_000
    horizon: Union[int, str] = "auto"
    quantiles: Tuple[float, ...] = DEFAULT_QUANTILES
    chunk: int = 8192

    def __post_init__(self):
        qs = tuple(float(q) for q in self.quantiles)
        if list(qs) != sorted(qs) or any(not 0.0 < q < 1.0 for q in qs):
            raise ValueError(f"quantiles must be sorted and lie in (0, 1): {qs}")
        object.__setattr__(self, "quantiles", qs)
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be positive")
        if self.horizon != "auto" and int(self.horizon) < 1:
            raise ValueError("horizon must be positive or 'auto'")


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: TabularMdp
    agent: AgentSpec
    policy: PolicySpec
    total_steps: int = 300_000
    n_trials: int = 20
    eval: EvalConfig = EvalConfig()
    master_seed: int = 0
    name: str = "experiment"

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")

    @property
    def lr_schedule(self):
        return self.agent.learning_rate


@dataclass(frozen=True)
class ReturnStats:
    mean: float
    quantile_values: Dict[float, float]
    n_rollouts: int
    horizon: int
    truncation_bound: float   # gamma^K * R_bound / (1 - gamma) for the deterministic rewards
    heavy_tailed: bool = False

    def as_dict(self) -> Dict[str, float]:
        out = {"mean": self.mean}
        for q, v in self.quantile_values.items():
            out[f"q{q:g}"] = v
        return out


@dataclass
class TrialResult:
    seed: int
    state: AgentState
    greedy_actions: np.ndarray
    path: List[int]
    stats: ReturnStats
    rewards: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: List[TrialResult]
    aggregate: Dict[str, Tuple[float, float]]

    def values(self, statistic: str) -> np.ndarray:
        return np.array([t.stats.as_dict()[statistic] for t in self.trials])


def auto_horizon(discount: float, reward_bound: float, tol: float = HORIZON_TOLERANCE) -> int:
    """Smallest K with gamma^K * R / (1 - gamma) below ``tol``."""
    if discount == 0.0 or reward_bound == 0.0:
        return 1
    k = math.ceil(math.log(tol * (1.0 - discount) / reward_bound) / math.log(discount))
    return max(k, 1)


def _policy_cdf(policy: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(policy, axis=1)
    cdf[:, -1] = 1.0
    return cdf


def one_hot_policy(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    out = np.zeros((actions.size, n_actions))
    out[np.arange(actions.size), actions] = 1.0
    return out


def monte_carlo_return_stats(mdp: TabularMdp, policy: np.ndarray, start_state: int, discount: float,
                             n_rollouts: int, horizon: Union[int, str], rng: np.random.Generator,
                             quantiles: Sequence[float] = DEFAULT_QUANTILES,
                             chunk: int = 8192, backend: Optional[str] = None) -> ReturnStats:
    """Sample truncated discounted returns from ``start_state`` under a fixed policy.

    ``policy`` is an (S, A) matrix of action probabilities.  Quantiles use linear
    interpolation between order statistics.
    """
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_actions) or np.any(np.abs(policy.sum(axis=1) - 1) > 1e-9):
        raise ValueError("policy must be an (S, A) row-stochastic matrix")
    bound = mdp.max_abs_deterministic_reward()
    k = auto_horizon(discount, bound) if horizon == "auto" else int(horizon)
    truncation = (discount ** k) * bound / (1.0 - discount) if discount < 1.0 else math.inf
    comp = mdp.compiled
    pcdf = _policy_cdf(policy)
    stochastic_policy = bool(np.any((policy > 0.0) & (policy < 1.0)))
    returns = np.empty(n_rollouts)
    discounts = discount ** np.arange(k, dtype=float)
    done = 0
    while done < n_rollouts:
        n = min(chunk, n_rollouts - done)
        u_act = rng.random((k, n)) if stochastic_policy else np.zeros((k, n))
        u_next = rng.random((k, n))
        g, hits = kernels.rollout_returns(pcdf, comp.trans_cdf, comp.reward_kind, comp.reward_value,
                                          u_act, u_next, start_state, discount, backend=backend)
        # stochastic rewards are drawn only where collected, in time-major order
        steps, rollouts = np.nonzero(hits)
        kinds = hits[steps, rollouts]
        for j, spec in enumerate(comp.stochastic):
            sel = kinds == j + 1
            if sel.any():
                np.add.at(g, rollouts[sel], discounts[steps[sel]] * spec.sample(rng, int(sel.sum())))
        returns[done:done + n] = g
        done += n
    qs = tuple(float(q) for q in quantiles)
    qvals = np.quantile(returns, qs, method="linear") if qs else []
    return ReturnStats(
        mean=float(returns.mean()),
        quantile_values={q: float(v) for q, v in zip(qs, qvals)},
        n_rollouts=n_rollouts,
        horizon=k,
        truncation_bound=truncation,
        heavy_tailed=mdp.has_stochastic_rewards,
    )


def run_trial(config: ExperimentConfig, seed: int, record_rewards: bool = False) -> TrialResult:
    """Train for ``total_steps`` steps, freeze the greedy policy and evaluate it."""
    mdp, agent, policy = config.mdp, config.agent, config.policy
    train_seq, eval_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    n = config.total_steps
    u_act, u_eps, u_next = rng.random(n), rng.random(n), rng.random(n)
    comp = mdp.compiled
    if comp.stochastic:
        draws = np.stack([spec.sample(rng, n) for spec in comp.stochastic])
    else:
        draws = np.zeros((0, n))
    alpha = agent.learning_rate.values(n)
    explore = policy.schedule.values(n)
    policy.check(explore)

    state = initial_state(agent, mdp)
    values = state.table.values if state.table is not None else np.zeros(state.qtab.shape + (3,))
    kind = agent.model.code if agent.model is not None else 0
    rewards = np.empty(n)
    _, bad = kernels.train_kernel(
        agent.code, kind, agent.target == "on", policy.code, agent.gradient == "natural",
        agent.q, agent.zq, values, state.qtab, comp.trans_cdf, comp.reward_kind, comp.reward_value,
        draws, alpha, explore, u_act, u_eps, u_next, mdp.start_state, mdp.discount, rewards,
        *agent.skew_range)
    if bad >= 0:
        raise FloatingPointError(f"non-finite parameters at step {bad} (seed {seed})")
    state.t = n
    if state.table is not None:
        state.table.validate()

    greedy = state.greedy_actions()
    ev = config.eval
    stats = monte_carlo_return_stats(
        mdp, one_hot_policy(greedy, mdp.n_actions), mdp.start_state, mdp.discount,
        ev.n_rollouts, ev.horizon, np.random.default_rng(eval_seq), ev.quantiles, ev.chunk)
    return TrialResult(seed, state, greedy, greedy_path(mdp, greedy), stats,
                       rewards if record_rewards else None)


def trial_seeds(master_seed: int, n_trials: int) -> List[int]:
    children = np.random.SeedSequence(master_seed).spawn(n_trials)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def aggregate(trials: Sequence[TrialResult]) -> Dict[str, Tuple[float, float]]:
    """Mean and sample standard deviation (ddof=1) of every statistic over trials."""
    keys = list(trials[0].stats.as_dict())
    out = {}
    for key in keys:
        vals = np.array([t.stats.as_dict()[key] for t in trials])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
        out[key] = (float(vals.mean()), std)
    return out


def _run_one(args):
    config, seed = args
    return run_trial(config, seed)


def run_experiment(config: ExperimentConfig, workers: int = 1,
                   seeds: Optional[Sequence[int]] = None) -> ExperimentResult:
    seeds = list(seeds) if seeds is not None else trial_seeds(config.master_seed, config.n_trials)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_one, [(config, s) for s in seeds]))
    else:
        trials = []
        for i, s in enumerate(seeds):
            trials.append(run_trial(config, s))
            logger.info("%s: trial %d/%d done", config.name, i + 1, len(seeds))
    return ExperimentResult(config, trials, aggregate(trials))


# Significance ------------------------------------------------------------------------


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float
    significant: bool
    comparable: bool = True


def welch_t_test(sample_a, sample_b, level: float = 0.01) -> WelchResult:
    """Two-sided Welch t-test; zero-variance samples are flagged as non-comparable."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va + vb == 0.0:
        return WelchResult(math.nan, math.nan, math.nan, False, comparable=False)
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = 2.0 * sps.t.sf(abs(t), df)
    return WelchResult(float(t), float(df), float(p), bool(p < level))


# Result files ---------------------------------------------------------------------------


RESULT_COLUMNS = ("algorithm", "model", "q", "statistic", "mean", "std", "n_trials", "seed")
TRIAL_COLUMNS = ("trial", "seed", "statistic", "value")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def results_csv(config: ExperimentConfig, agg: Dict[str, Tuple[float, float]], n_trials: int) -> str:
    agent = config.agent
    model = agent.model.value if agent.model is not None else "-"
    q = repr(float(agent.q)) if agent.algorithm == "qq" else "-"
    buf = io.StringIO()
    buf.write(",".join(RESULT_COLUMNS) + "\n")
    for stat, (mean, std) in agg.items():
        buf.write(",".join([agent.label, model, q, stat, _fmt(mean), _fmt(std),
                            str(n_trials), str(config.master_seed)]) + "\n")
    return buf.getvalue()


def trials_csv(trials: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    buf.write(",".join(TRIAL_COLUMNS) + "\n")
    for i, tr in enumerate(trials):
        for stat, v in tr.stats.as_dict().items():
            buf.write(f"{i},{tr.seed},{stat},{_fmt(v)}\n")
    return buf.getvalue()


def paths_csv(trials: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    buf.write("trial,seed,path,greedy_actions\n")
    for i, tr in enumerate(trials):
        path = " ".join(str(s) for s in tr.path)
        acts = " ".join(str(a) for a in tr.greedy_actions)
        buf.write(f"{i},{tr.seed},{path},{acts}\n")
    return buf.getvalue()


def aggregate_trials_csv(text: str) -> Dict[str, Tuple[float, float]]:
    """Re-aggregate a per-trial file written by :func:`trials_csv`."""
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    by_stat: Dict[str, List[float]] = {}
    for _, _, stat, value in rows:
        by_stat.setdefault(stat, []).append(float(value))
    out = {}
    for stat, vals in by_stat.items():
        arr = np.array(vals)
        out[stat] = (float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else math.nan)
    return out
