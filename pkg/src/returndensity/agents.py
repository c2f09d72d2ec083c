"""q-Q learning / q-SARSA agents, the two baselines and their action-selection policies."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import special

from . import kernels
from .densities import SKEW_MAX, SKEW_MIN, DensityParams, ModelKind, ParamTable
from .mdp import TabularMdp, TransitionSample

ALGORITHMS = ("qq", "watkins", "qhat")
_ALGORITHM_CODES = {"qq": kernels.QQ, "watkins": kernels.WATKINS, "qhat": kernels.QHAT}
_ALGORITHM_ALIASES = {
    "q_learning": "watkins", "qlearning": "watkins", "watkins_q": "watkins",
    "q_hat": "qhat", "qhat_learning": "qhat",
    "qq_learning": "qq", "q_q": "qq", "qsarsa": "qq", "q_sarsa": "qq",
}


# Schedules ------------------------------------------------------------------------


_SCHEDULE_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class Schedule:
    """A step-indexed scalar schedule over a run of ``T`` steps.

    ``constant(v)``: v.  ``harmonic(a, b)``: 1 / (a + b t / T).
    ``linear(start, end)``: start + (end - start) t / T.
    """

    kind: str
    args: tuple

    def __post_init__(self):
        arity = {"constant": 1, "harmonic": 2, "linear": 2}
        if self.kind not in arity:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if len(self.args) != arity[self.kind]:
            raise ValueError(f"{self.kind} schedule takes {arity[self.kind]} arguments")
        object.__setattr__(self, "args", tuple(float(a) for a in self.args))

    @classmethod
    def parse(cls, text) -> "Schedule":
        if isinstance(text, Schedule):
            return text
        try:
            return cls("constant", (float(text),))
        except ValueError:
            pass
        match = _SCHEDULE_RE.match(str(text).lower())
        if not match:
            raise ValueError(f"cannot parse schedule {text!r}")
        args = tuple(float(a) for a in match.group(2).split(",") if a.strip())
        return cls(match.group(1), args)

    def to_text(self) -> str:
        return f"{self.kind}(" + ", ".join(repr(a) for a in self.args) + ")"

    def values(self, total_steps: int, start: int = 0, count: Optional[int] = None) -> np.ndarray:
        count = total_steps - start if count is None else count
        t = np.arange(start, start + count, dtype=float)
        frac = t / total_steps if total_steps > 0 else np.zeros_like(t)
        if self.kind == "constant":
            return np.full(count, self.args[0])
        if self.kind == "harmonic":
            a, b = self.args
            return 1.0 / (a + b * frac)
        lo, hi = self.args
        return lo + (hi - lo) * frac

    def at(self, t: int, total_steps: int) -> float:
        return float(self.values(total_steps, start=t, count=1)[0])


@dataclass(frozen=True)
class PolicySpec:
    """Softmax over Q-hat values with inverse temperature beta_t, or epsilon-greedy."""

    kind: str
    schedule: Schedule

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "_")
        if kind in ("epsilon", "egreedy", "e_greedy"):
            kind = "epsilon_greedy"
        if kind not in ("softmax", "epsilon_greedy"):
            raise ValueError(f"unknown policy {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "schedule", Schedule.parse(self.schedule))

    @property
    def code(self) -> int:
        return kernels.SOFTMAX if self.kind == "softmax" else kernels.EPSILON_GREEDY

    def check(self, values: np.ndarray):
        if self.kind == "softmax" and np.any(values < 0.0):
            raise ValueError("inverse temperature must be non-negative")
        if self.kind == "epsilon_greedy" and np.any((values < 0.0) | (values > 1.0)):
            raise ValueError("epsilon must lie in [0, 1]")

    def probabilities(self, values, t: int = 0, total_steps: int = 1) -> np.ndarray:
        explore = self.schedule.at(t, total_steps)
        self.check(np.array([explore]))
        out = np.empty(len(values))
        kernels.policy_probs(self.code, np.asarray(values, dtype=float), explore, out)
        return out


def softmax_policy(beta_end: float = 2.0) -> PolicySpec:
    return PolicySpec("softmax", Schedule("linear", (0.0, beta_end)))


def epsilon_greedy_policy() -> PolicySpec:
    return PolicySpec("epsilon_greedy", Schedule("linear", (1.0, 0.0)))


def select_action(policy: PolicySpec, values, t: int, rng: np.random.Generator,
                  total_steps: int = 1) -> int:
    """Draw an action; greedy ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("action values must be finite")
    explore = policy.schedule.at(t, total_steps)
    policy.check(np.array([explore]))
    u_act, u_eps = rng.random(), rng.random()
    return int(kernels.select_action_u(policy.code, values, explore, u_act, u_eps))


# Agents -----------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    algorithm: str = "qq"
    model: Optional[ModelKind] = ModelKind.GAUSSIAN
    q: float = 0.5
    target: str = "off"              # "off" (q-Q learning) or "on" (q-SARSA)
    learning_rate: Schedule = Schedule("harmonic", (30.0, 30.0))
    gradient: str = "natural"        # "ordinary" only for diagnostics
    init_central: float = 0.0
    init_scale: float = 1.0
    qhat_init: Optional[float] = None  # Q-hat optimistic start; None -> r_goal / (1 - gamma)
    skew_range: tuple = (SKEW_MIN, SKEW_MAX)  # projection interval for the skewness c

    def __post_init__(self):
        algo = self.algorithm.lower().replace("-", "_")
        algo = _ALGORITHM_ALIASES.get(algo, algo)
        if algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        object.__setattr__(self, "learning_rate", Schedule.parse(self.learning_rate))
        if algo == "qq":
            if self.model is None:
                raise ValueError("q-Q learning needs a density model")
            object.__setattr__(self, "model", ModelKind.parse(self.model))
            if not 0.0 < self.q < 1.0:
                raise ValueError(f"q must lie in (0, 1), got {self.q}")
        else:
            object.__setattr__(self, "model", None)
        if self.target not in ("off", "on"):
            raise ValueError("target must be 'off' or 'on'")
        if self.gradient not in ("natural", "ordinary"):
            raise ValueError("gradient must be 'natural' or 'ordinary'")
        if self.init_scale <= 0.0:
            raise ValueError("initial scale must be positive")
        lo, hi = (float(x) for x in self.skew_range)
        if not SKEW_MIN <= lo < hi <= SKEW_MAX:
            raise ValueError(f"skew_range must satisfy {SKEW_MIN} <= lo < hi <= {SKEW_MAX}")
        object.__setattr__(self, "skew_range", (lo, hi))

    @property
    def code(self) -> int:
        return _ALGORITHM_CODES[self.algorithm]

    @property
    def label(self) -> str:
        if self.algorithm == "qq":
            return "qsarsa" if self.target == "on" else "qq"
        return self.algorithm

    @property
    def zq(self) -> float:
        return float(np.sqrt(2.0) * special.erfinv(2.0 * self.q - 1.0))


@dataclass
class AgentState:
    """Learned tables; ``qtab`` caches Q-hat_q for q-Q agents and is the Q table otherwise."""

    qtab: np.ndarray
    table: Optional[ParamTable] = None
    t: int = 0
    history: List[float] = field(default_factory=list, repr=False)

    def greedy_actions(self) -> np.ndarray:
        return np.array([kernels.argmax_first(row) for row in self.qtab])

    def to_text(self) -> str:
        """Checkpoint: step counter followed by the parameter or Q table."""
        head = f"# step = {self.t}\n"
        if self.table is not None:
            return head + self.table.to_text()
        lines = ["state,action,q"]
        for s in range(self.qtab.shape[0]):
            for a in range(self.qtab.shape[1]):
                lines.append(f"{s},{a},{format(self.qtab[s, a], '.17g')}")
        return head + "\n".join(lines) + "\n"


def initial_state(spec: AgentSpec, mdp: TabularMdp) -> AgentState:
    n_s, n_a = mdp.n_states, mdp.n_actions
    if spec.algorithm == "qq":
        table = ParamTable.initial(spec.model, n_s, n_a, q=spec.q,
                                   central=spec.init_central, scale=spec.init_scale)
        if spec.model is ModelKind.SKEWED_LAPLACE:
            np.clip(table.values[..., 2], *spec.skew_range, out=table.values[..., 2])
        qtab = np.empty((n_s, n_a))
        for s in range(n_s):
            for a in range(n_a):
                v = table.values[s, a]
                qtab[s, a] = kernels.qhat_value(spec.model.code, v[0], v[1], v[2], spec.q, spec.zq)
        return AgentState(qtab, table)
    if spec.algorithm == "qhat":
        init = spec.qhat_init
        if init is None:
            init = _max_reward(mdp) / (1.0 - mdp.discount)
        return AgentState(np.full((n_s, n_a), float(init)))
    return AgentState(np.zeros((n_s, n_a)))


def _max_reward(mdp: TabularMdp) -> float:
    vals = [sp.value for sp in mdp.reward_spec.values() if hasattr(sp, "value")]
    return max(vals, default=0.0)


def q_value(params: DensityParams, q: float) -> float:
    """Q-hat_q: the q-quantile of a return density."""
    return float(params.quantile(q))


def agent_step(spec: AgentSpec, state: AgentState, sample: TransitionSample, discount: float,
               policy: Optional[PolicySpec] = None, total_steps: int = 1) -> AgentState:
    """Apply one update in place and advance the step counter.

    ``policy`` is needed for q-SARSA (its probabilities weight the target mixture).
    """
    n_s, n_a = state.qtab.shape
    if not (0 <= sample.state < n_s and 0 <= sample.next_state < n_s and 0 <= sample.action < n_a):
        raise IndexError(f"transition {sample} out of range")
    alpha = spec.learning_rate.at(state.t, total_steps)
    explore, pcode = 0.0, kernels.EPSILON_GREEDY
    if policy is not None:
        explore, pcode = policy.schedule.at(state.t, total_steps), policy.code
    elif spec.algorithm == "qq" and spec.target == "on":
        raise ValueError("q-SARSA updates need the behaviour policy")
    values = state.table.values if state.table is not None else np.zeros((n_s, n_a, 3))
    kind = spec.model.code if spec.model is not None else 0
    ok = kernels.agent_update(spec.code, kind, spec.target == "on", pcode, spec.gradient == "natural",
                              spec.q, spec.zq, values, state.qtab, sample.state, sample.action,
                              float(sample.reward), sample.next_state, alpha, explore,
                              float(discount), np.empty(n_a), *spec.skew_range)
    if not ok:
        raise FloatingPointError(f"non-finite parameters after step {state.t}")
    state.t += 1
    return state


def greedy_path(mdp: TabularMdp, greedy_actions) -> List[int]:
    """Most probable state sequence from the start state under a greedy policy.

    Stops on arrival at the goal (grid worlds) or when a state repeats.
    """
    greedy_actions = np.asarray(greedy_actions)
    layout = mdp.layout
    path = [mdp.start_state]
    seen = {mdp.start_state}
    s = mdp.start_state
    for _ in range(mdp.n_states + 1):
        a = int(greedy_actions[s])
        if layout is not None:
            row, col = layout.cell(s)
            dr, dc = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1)}[a]
            dest = (row + dr, col + dc)
            if dest == layout.goal and np.argmax(mdp.transition[s, a]) == mdp.start_state:
                path.append(layout.index(*dest))
                return path
        s = int(np.argmax(mdp.transition[s, a]))
        path.append(s)
        if s in seen or s == mdp.goal_state:
            return path
        seen.add(s)
    return path
