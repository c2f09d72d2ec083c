"""Parametric return-density families: Gaussian, Laplace and skewed Laplace.

Every family exposes the same surface (``log_pdf``, ``pdf``, ``cdf``,
``quantile``, ``score``, ``fisher_information``, ``sample``).  The functions
accept scalars or numpy arrays for ``x``/``q``.  Parameter objects are frozen
dataclasses validated at construction.

A :class:`ParamTable` stores one parameter vector per (state, action) pair in a
dense ``(n_states, n_actions, 3)`` array; two-parameter families leave the last
column at zero.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import special

# Projection bounds applied after every parameter update.
SCALE_FLOOR = 1e-3
SKEW_MIN = 0.01
SKEW_MAX = 0.99

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelKind(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    SKEWED_LAPLACE = "skewed_laplace"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @property
    def n_params(self) -> int:
        return 3 if self is ModelKind.SKEWED_LAPLACE else 2

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"gauss": "gaussian", "normal": "gaussian", "skewed": "skewed_laplace",
                   "skew_laplace": "skewed_laplace", "asymmetric_laplace": "skewed_laplace"}
        return cls(aliases.get(key, key))


_KIND_CODES = {ModelKind.GAUSSIAN: 0, ModelKind.LAPLACE: 1, ModelKind.SKEWED_LAPLACE: 2}
KIND_FROM_CODE = {v: k for k, v in _KIND_CODES.items()}


def _check_q(q):
    q_arr = np.asarray(q, dtype=float)
    if np.any(~(q_arr > 0.0)) or np.any(~(q_arr < 1.0)):
        raise ValueError(f"quantile level must lie in (0, 1), got {q!r}")
    return q_arr


def _coerce(obj, *names):
    for name in names:
        object.__setattr__(obj, name, float(getattr(obj, name)))


def _out(value):
    """Return a Python float for 0-d results, arrays otherwise."""
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    kind = ModelKind.GAUSSIAN

    def __post_init__(self):
        _coerce(self, "mu", "sigma")
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"non-finite Gaussian parameters {self}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def central(self) -> float:
        return self.mu

    @property
    def scale(self) -> float:
        return self.sigma

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma])

    def log_pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return _out(-0.5 * z * z - _LOG_SQRT_2PI - math.log(self.sigma))

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return _out(special.ndtr(z))

    def quantile(self, q):
        q = _check_q(q)
        return _out(self.mu + self.sigma * math.sqrt(2.0) * special.erfinv(2.0 * q - 1.0))

    def score(self, x):
        d = np.asarray(x, dtype=float) - self.mu
        s2 = self.sigma * self.sigma
        return np.stack([d / s2, -1.0 / self.sigma + d * d / (s2 * self.sigma)])

    def fisher_information(self) -> np.ndarray:
        s2 = self.sigma * self.sigma
        return np.array([[1.0 / s2, 0.0], [0.0, 2.0 / s2]])


@dataclass(frozen=True)
class LaplaceParams:
    m: float
    b: float

    kind = ModelKind.LAPLACE

    def __post_init__(self):
        _coerce(self, "m", "b")
        if not (math.isfinite(self.m) and math.isfinite(self.b)):
            raise ValueError(f"non-finite Laplace parameters {self}")
        if self.b <= 0.0:
            raise ValueError(f"b must be positive, got {self.b}")

    @property
    def central(self) -> float:
        return self.m

    @property
    def scale(self) -> float:
        return self.b

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.b])

    def log_pdf(self, x):
        d = np.abs(np.asarray(x, dtype=float) - self.m)
        return _out(-d / self.b - math.log(2.0 * self.b))

    def cdf(self, x):
        d = np.asarray(x, dtype=float) - self.m
        left = 0.5 * np.exp(np.minimum(d, 0.0) / self.b)
        right = 1.0 - 0.5 * np.exp(-np.maximum(d, 0.0) / self.b)
        return _out(np.where(d < 0.0, left, right))

    def quantile(self, q):
        q = _check_q(q)
        lo = self.m + self.b * np.log(2.0 * np.minimum(q, 0.5))
        hi = self.m - self.b * np.log(2.0 - 2.0 * np.maximum(q, 0.5))
        return _out(np.where(q <= 0.5, lo, hi))

    def score(self, x):
        # x == m takes the right-hand branch (right-limit convention).
        d = np.asarray(x, dtype=float) - self.m
        sign = np.where(d < 0.0, -1.0, 1.0)
        return np.stack([sign / self.b, -1.0 / self.b + np.abs(d) / (self.b * self.b)])

    def fisher_information(self) -> np.ndarray:
        inv = 1.0 / (self.b * self.b)
        return np.array([[inv, 0.0], [0.0, inv]])


@dataclass(frozen=True)
class SkewedLaplaceParams:
    m: float
    b: float
    c: float

    kind = ModelKind.SKEWED_LAPLACE

    def __post_init__(self):
        _coerce(self, "m", "b", "c")
        if not all(math.isfinite(v) for v in (self.m, self.b, self.c)):
            raise ValueError(f"non-finite skewed Laplace parameters {self}")
        if self.b <= 0.0:
            raise ValueError(f"b must be positive, got {self.b}")
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")

    @property
    def central(self) -> float:
        return self.m

    @property
    def scale(self) -> float:
        return self.b

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.b, self.c])

    def log_pdf(self, x):
        m, b, c = self.m, self.b, self.c
        d = np.asarray(x, dtype=float) - m
        expo = np.where(d < 0.0, (1.0 - c) * d / b, -c * d / b)
        return _out(math.log(c * (1.0 - c) / b) + expo)

    def cdf(self, x):
        m, b, c = self.m, self.b, self.c
        d = np.asarray(x, dtype=float) - m
        left = c * np.exp((1.0 - c) * np.minimum(d, 0.0) / b)
        right = 1.0 - (1.0 - c) * np.exp(-c * np.maximum(d, 0.0) / b)
        return _out(np.where(d < 0.0, left, right))

    def quantile(self, q):
        q = _check_q(q)
        m, b, c = self.m, self.b, self.c
        lo = m + b / (1.0 - c) * np.log(np.minimum(q, c) / c)
        hi = m - b / c * np.log((1.0 - np.maximum(q, c)) / (1.0 - c))
        return _out(np.where(q <= c, lo, hi))

    def score(self, x):
        m, b, c = self.m, self.b, self.c
        d = np.asarray(x, dtype=float) - m
        left = d < 0.0
        dm = np.where(left, -(1.0 - c) / b, c / b)
        pinball = np.where(left, -(1.0 - c) * d, c * d)
        db = -1.0 / b + pinball / (b * b)
        dc = (1.0 - 2.0 * c) / (c * (1.0 - c)) - d / b
        return np.stack([dm, db, dc])

    def fisher_information(self) -> np.ndarray:
        b, c = self.b, self.c
        k = 1.0 - c
        f_bc = -(1.0 - 2.0 * c) / (b * c * k)
        f_cc = 1.0 / (c * c) + 1.0 / (k * k)
        return np.array([
            [c * k / (b * b), 0.0, -1.0 / b],
            [0.0, 1.0 / (b * b), f_bc],
            [-1.0 / b, f_bc, f_cc],
        ])


DensityParams = Union[GaussianParams, LaplaceParams, SkewedLaplaceParams]

_PARAM_CLASSES = {
    ModelKind.GAUSSIAN: GaussianParams,
    ModelKind.LAPLACE: LaplaceParams,
    ModelKind.SKEWED_LAPLACE: SkewedLaplaceParams,
}


def make_params(kind, values) -> DensityParams:
    """Build a parameter object from a kind and a flat sequence of values."""
    kind = ModelKind.parse(kind)
    values = [float(v) for v in values][: kind.n_params]
    return _PARAM_CLASSES[kind](*values)


def project(kind, values) -> np.ndarray:
    """Clip a raw parameter vector back into the valid region."""
    kind = ModelKind.parse(kind)
    out = np.array(values, dtype=float)
    out[1] = max(out[1], SCALE_FLOOR)
    if kind is ModelKind.SKEWED_LAPLACE:
        out[2] = min(max(out[2], SKEW_MIN), SKEW_MAX)
    return out


# Module-level operation surface ------------------------------------------


def log_pdf(params: DensityParams, x):
    return params.log_pdf(x)


def pdf(params: DensityParams, x):
    return _out(np.exp(params.log_pdf(x)))


def cdf(params: DensityParams, x):
    return params.cdf(x)


def quantile(params: DensityParams, q):
    return params.quantile(q)


def score(params: DensityParams, x) -> np.ndarray:
    return params.score(x)


def fisher_information(params: DensityParams) -> np.ndarray:
    return params.fisher_information()


def sample(params: DensityParams, rng: np.random.Generator, size=None):
    """Inverse-transform sampling through :func:`quantile`."""
    u = rng.random(size)
    # rng.random can return exactly 0.0
    u = np.where(u > 0.0, u, np.nextafter(0.0, 1.0))
    return params.quantile(u)


# Lookup table ---------------------------------------------------------------


class ParamTable:
    """Dense (state, action) -> density parameters lookup table."""

    def __init__(self, kind, values: np.ndarray):
        self.kind = ModelKind.parse(kind)
        values = np.array(values, dtype=float)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ValueError("values must have shape (n_states, n_actions, 3)")
        self.values = values
        self.validate()

    @classmethod
    def initial(cls, kind, n_states: int, n_actions: int, q: float = 0.5,
                central: float = 0.0, scale: float = 1.0) -> "ParamTable":
        """Neutral start: central 0, scale 1 and (skewed Laplace) skewness ``q``."""
        kind = ModelKind.parse(kind)
        values = np.zeros((n_states, n_actions, 3))
        values[:, :, 0] = central
        values[:, :, 1] = scale
        if kind is ModelKind.SKEWED_LAPLACE:
            values[:, :, 2] = min(max(q, SKEW_MIN), SKEW_MAX)
        return cls(kind, values)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def validate(self):
        v = self.values
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter table contains non-finite entries")
        if np.any(v[:, :, 1] <= 0.0):
            raise ValueError("parameter table contains non-positive scales")
        if self.kind is ModelKind.SKEWED_LAPLACE and np.any((v[:, :, 2] <= 0) | (v[:, :, 2] >= 1)):
            raise ValueError("parameter table contains skewness outside (0, 1)")

    def __getitem__(self, key) -> DensityParams:
        s, a = key
        return make_params(self.kind, self.values[s, a])

    def __setitem__(self, key, params: DensityParams):
        if params.kind is not self.kind:
            raise TypeError(f"table holds {self.kind.value}, got {params.kind.value}")
        s, a = key
        self.values[s, a, : self.kind.n_params] = params.as_array()

    def copy(self) -> "ParamTable":
        return ParamTable(self.kind, self.values.copy())

    def quantiles(self, q: float) -> np.ndarray:
        """Q-hat_q(s, a) for every entry."""
        _check_q(q)
        v = self.values
        out = np.empty(v.shape[:2])
        for s in range(v.shape[0]):
            for a in range(v.shape[1]):
                out[s, a] = make_params(self.kind, v[s, a]).quantile(q)
        return out

    # Plain-text format: one row per (state, action).
    def to_text(self) -> str:
        names = _COLUMN_NAMES[self.kind]
        buf = io.StringIO()
        buf.write("state,action,model," + ",".join(names) + "\n")
        for s in range(self.n_states):
            for a in range(self.n_actions):
                vals = ",".join(format(x, ".17g") for x in self.values[s, a, : len(names)])
                buf.write(f"{s},{a},{self.kind.value},{vals}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ParamTable":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        header = lines[0].split(",")
        if header[:3] != ["state", "action", "model"]:
            raise ValueError("not a parameter table: bad header")
        rows = [ln.split(",") for ln in lines[1:]]
        kinds = {r[2] for r in rows}
        if len(kinds) != 1:
            raise ValueError(f"mixed model kinds in table: {sorted(kinds)}")
        kind = ModelKind.parse(kinds.pop())
        n_s = max(int(r[0]) for r in rows) + 1
        n_a = max(int(r[1]) for r in rows) + 1
        values = np.zeros((n_s, n_a, 3))
        seen = np.zeros((n_s, n_a), dtype=bool)
        for r in rows:
            s, a = int(r[0]), int(r[1])
            values[s, a, : kind.n_params] = [float(x) for x in r[3:3 + kind.n_params]]
            seen[s, a] = True
        if not seen.all():
            raise ValueError("parameter table is missing (state, action) rows")
        return cls(kind, values)


_COLUMN_NAMES = {
    ModelKind.GAUSSIAN: ("mu", "sigma"),
    ModelKind.LAPLACE: ("m", "b"),
    ModelKind.SKEWED_LAPLACE: ("m", "b", "c"),
}
