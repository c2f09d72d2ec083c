"""Finite MDPs, stochastic reward generators and the cliff-walk grid world."""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import stats

NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
ACTION_NAMES = ("north", "south", "east", "west")
_MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}


# Reward specifications -------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    value: float

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    @property
    def mean(self) -> float:
        return float(self.value)

    def to_text(self) -> str:
        return f"deterministic({self.value!r})"


@dataclass(frozen=True)
class NegativeGamma:
    """Reward ``-X`` with ``X ~ Gamma(shape, scale)``."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"gamma shape and scale must be positive: {self}")

    def sample(self, rng, size=None):
        return -rng.gamma(self.shape, self.scale, size)

    @property
    def mean(self) -> float:
        return -self.shape * self.scale

    def cdf(self, x):
        return stats.gamma.sf(-np.asarray(x, dtype=float), self.shape, scale=self.scale)

    def ppf(self, q):
        return -stats.gamma.isf(np.asarray(q, dtype=float), self.shape, scale=self.scale)

    def to_text(self) -> str:
        return f"negative_gamma({self.shape!r}, {self.scale!r})"


@dataclass(frozen=True)
class ShiftedStudentT:
    """Reward ``location + scale * T`` with ``T`` standard Student-t."""

    dof: float
    scale: float
    location: float = 0.0

    def __post_init__(self):
        if not self.dof > 1.0:
            raise ValueError(f"dof must exceed 1 for a finite mean: {self}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive: {self}")

    def sample(self, rng, size=None):
        return self.location + self.scale * rng.standard_t(self.dof, size)

    @property
    def mean(self) -> float:
        return float(self.location)

    @property
    def variance(self) -> float:
        if self.dof <= 2.0:
            return math.inf
        return self.scale ** 2 * self.dof / (self.dof - 2.0)

    def cdf(self, x):
        return stats.t.cdf(x, self.dof, loc=self.location, scale=self.scale)

    def ppf(self, q):
        return stats.t.ppf(q, self.dof, loc=self.location, scale=self.scale)

    def to_text(self) -> str:
        return f"student_t({self.dof!r}, {self.scale!r}, {self.location!r})"


RewardSpec = Union[Deterministic, NegativeGamma, ShiftedStudentT]

_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")
_SPEC_TYPES = {
    "deterministic": Deterministic,
    "negative_gamma": NegativeGamma,
    "student_t": ShiftedStudentT,
    "shifted_student_t": ShiftedStudentT,
}


def parse_reward_spec(text: str) -> RewardSpec:
    """Parse ``deterministic(-10)``, ``negative_gamma(0.5, 20)`` or ``student_t(1.2, 10, -10)``.

    A bare number is read as a deterministic reward.
    """
    text = str(text).strip()
    try:
        return Deterministic(float(text))
    except ValueError:
        pass
    match = _SPEC_RE.match(text.lower())
    if not match or match.group(1) not in _SPEC_TYPES:
        raise ValueError(f"cannot parse reward spec {text!r}")
    args = [float(a) for a in match.group(2).split(",") if a.strip()]
    return _SPEC_TYPES[match.group(1)](*args)


def sample_reward(spec: RewardSpec, rng: np.random.Generator) -> float:
    return float(spec.sample(rng))


# MDPs -------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionSample:
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True)
class GridLayout:
    """Geometry of a grid-world MDP; ``cliff`` lists cells whose south edge is the cliff."""

    width: int
    height: int
    start: Tuple[int, int]
    goal: Tuple[int, int]
    cliff: Tuple[Tuple[int, int], ...]

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def cell(self, state: int) -> Tuple[int, int]:
        return divmod(state, self.width)

    @property
    def cliff_states(self) -> Tuple[int, ...]:
        return tuple(self.index(r, c) for r, c in self.cliff)


@dataclass(frozen=True)
class CompiledMdp:
    """Array form consumed by the numeric kernels."""

    trans_cdf: np.ndarray      # (S, A, S) cumulative successor probabilities
    reward_kind: np.ndarray    # (S, A, S) 0 = deterministic, k > 0 = stochastic spec k-1
    reward_value: np.ndarray   # (S, A, S) deterministic reward values
    stochastic: Tuple[RewardSpec, ...]


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    reward_spec: Dict[Tuple[int, int, int], RewardSpec]
    discount: float
    start_state: int = 0
    goal_state: Optional[int] = None
    layout: Optional[GridLayout] = field(default=None, compare=False)

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        n_s = p.shape[0]
        if not 0 <= self.start_state < n_s:
            raise ValueError("start state out of range")
        if self.goal_state is not None and not 0 <= self.goal_state < n_s:
            raise ValueError("goal state out of range")
        specs = dict(self.reward_spec)
        for (s, a, s2) in specs:
            if not (0 <= s < n_s and 0 <= a < p.shape[1] and 0 <= s2 < n_s):
                raise ValueError(f"reward key {(s, a, s2)} out of range")
        p.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward_spec", specs)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def reward(self, s: int, a: int, s2: int) -> RewardSpec:
        return self.reward_spec.get((s, a, s2), Deterministic(0.0))

    def expected_reward(self) -> np.ndarray:
        """E[r | s, a] as an (S, A) array; requires finite reward means."""
        out = np.zeros((self.n_states, self.n_actions))
        for (s, a, s2), spec in self.reward_spec.items():
            out[s, a] += self.transition[s, a, s2] * spec.mean
        return out

    def max_abs_deterministic_reward(self) -> float:
        vals = [abs(sp.value) for sp in self.reward_spec.values() if isinstance(sp, Deterministic)]
        return max(vals, default=0.0)

    @property
    def has_stochastic_rewards(self) -> bool:
        return any(not isinstance(sp, Deterministic) for sp in self.reward_spec.values())

    @cached_property
    def compiled(self) -> CompiledMdp:
        n_s, n_a = self.n_states, self.n_actions
        cdf = np.cumsum(self.transition, axis=2)
        cdf[:, :, -1] = 1.0
        kind = np.zeros((n_s, n_a, n_s), dtype=np.int64)
        value = np.zeros((n_s, n_a, n_s))
        stochastic: list = []
        for (s, a, s2), spec in sorted(self.reward_spec.items()):
            if isinstance(spec, Deterministic):
                value[s, a, s2] = spec.value
            else:
                if spec not in stochastic:
                    stochastic.append(spec)
                kind[s, a, s2] = stochastic.index(spec) + 1
        return CompiledMdp(cdf, kind, value, tuple(stochastic))


def step(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator) -> TransitionSample:
    if not (0 <= state < mdp.n_states and 0 <= action < mdp.n_actions):
        raise IndexError(f"(state, action) = {(state, action)} out of range")
    cdf = mdp.compiled.trans_cdf[state, action]
    next_state = int(np.searchsorted(cdf, rng.random(), side="right"))
    next_state = min(next_state, mdp.n_states - 1)
    reward = sample_reward(mdp.reward(state, action, next_state), rng)
    return TransitionSample(state, action, reward, next_state)


# Grid worlds ------------------------------------------------------------------


def build_grid_world(layout: GridLayout, cliff_reward: RewardSpec, goal_reward: float,
                     slip_main: float = 0.7, slip_other: float = 0.1,
                     discount: float = 0.95) -> TabularMdp:
    """Non-episodic grid world with slippery moves, a cliff edge and a teleporting goal.

    Any move across a cliff edge (chosen or slipped) is a fall: the agent stays put
    and receives ``cliff_reward``.  Arriving at the goal pays ``goal_reward`` and
    lands the agent on the start cell.  Moves off the grid leave the state unchanged.
    """
    for p in (slip_main, slip_other):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"slip probability {p} outside [0, 1]")
    if abs(slip_main + 3.0 * slip_other - 1.0) > 1e-12:
        raise ValueError("slip_main + 3 * slip_other must equal 1")
    w, h = layout.width, layout.height
    n_s = w * h
    start = layout.index(*layout.start)
    goal = layout.index(*layout.goal)
    cliff = set(layout.cliff)
    trans = np.zeros((n_s, 4, n_s))
    assigned: Dict[Tuple[int, int, int], RewardSpec] = {}
    goal_spec = Deterministic(float(goal_reward))

    for s in range(n_s):
        row, col = layout.cell(s)
        for a in range(4):
            for move, (dr, dc) in _MOVES.items():
                prob = slip_main if move == a else slip_other
                if prob == 0.0:
                    continue
                if move == SOUTH and (row, col) in cliff:
                    s2, spec = s, cliff_reward
                else:
                    r2, c2 = row + dr, col + dc
                    if not (0 <= r2 < h and 0 <= c2 < w):
                        r2, c2 = row, col
                    s2 = layout.index(r2, c2)
                    spec = Deterministic(0.0)
                    if s2 == goal:
                        s2, spec = start, goal_spec
                if assigned.setdefault((s, a, s2), spec) != spec:
                    raise ValueError(f"ambiguous reward for transition {(s, a, s2)}")
                trans[s, a, s2] += prob
    rewards = {k: v for k, v in assigned.items() if v != Deterministic(0.0)}
    return TabularMdp(trans, rewards, discount, start_state=start, goal_state=goal, layout=layout)


CLIFF_WALK_LAYOUT = GridLayout(
    width=6, height=3, start=(2, 0), goal=(2, 5),
    cliff=((2, 1), (2, 2), (2, 3), (2, 4)),
)


def build_cliff_walk(cliff_reward: RewardSpec = Deterministic(-10.0), goal_reward: float = 12.0,
                     slip_main: float = 0.7, slip_other: float = 0.1,
                     discount: float = 0.95) -> TabularMdp:
    """The 6 x 3 cliff walk: start bottom-left, goal bottom-right, cliff in between."""
    return build_grid_world(CLIFF_WALK_LAYOUT, cliff_reward, goal_reward,
                            slip_main, slip_other, discount)


def _fmt_cell(cell):
    return f"{cell[0]},{cell[1]}"


def _parse_cell(text):
    r, c = (int(x) for x in text.split(","))
    return (r, c)


def environment_to_text(layout: GridLayout, cliff_reward: RewardSpec, goal_reward: float,
                        slip_main: float, slip_other: float, discount: float) -> str:
    lines = [
        "[mdp]",
        f"width = {layout.width}",
        f"height = {layout.height}",
        f"start = {_fmt_cell(layout.start)}",
        f"goal = {_fmt_cell(layout.goal)}",
        "cliff = " + " ".join(_fmt_cell(c) for c in layout.cliff),
        f"slip_main = {slip_main!r}",
        f"slip_other = {slip_other!r}",
        f"goal_reward = {float(goal_reward)!r}",
        f"cliff_reward = {cliff_reward.to_text()}",
        f"discount = {discount!r}",
    ]
    return "\n".join(lines) + "\n"


def environment_from_section(section) -> TabularMdp:
    """Build a grid world from a mapping of the documented environment keys.

    Missing keys fall back to the cliff-walk defaults.
    """
    get = section.get
    width = int(get("width", 6))
    height = int(get("height", 3))
    start = _parse_cell(get("start", f"{height - 1},0"))
    goal = _parse_cell(get("goal", f"{height - 1},{width - 1}"))
    cliff_text = get("cliff", None)
    if cliff_text is None:
        cliff = tuple((height - 1, c) for c in range(start[1] + 1, goal[1]))
    else:
        cliff = tuple(_parse_cell(tok) for tok in cliff_text.split())
    layout = GridLayout(width, height, start, goal, cliff)
    return build_grid_world(
        layout,
        cliff_reward=parse_reward_spec(get("cliff_reward", "-10")),
        goal_reward=float(get("goal_reward", 12.0)),
        slip_main=float(get("slip_main", 0.7)),
        slip_other=float(get("slip_other", 0.1)),
        discount=float(get("discount", 0.95)),
    )


def environment_from_text(text: str) -> TabularMdp:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    if not parser.has_section("mdp"):
        raise ValueError("missing [mdp] section")
    return environment_from_section(parser["mdp"])
