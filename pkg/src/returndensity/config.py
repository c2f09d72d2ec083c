"""Plain-text experiment configuration: INI sections of ``key = value`` pairs.

Sections: ``[experiment]``, ``[mdp]``, ``[agent]``, ``[policy]``, ``[schedules]``
and ``[eval]``.  Every key has a default; :func:`resolve` fills them in so the
written, fully resolved file replays a run without consulting any default.
"""
from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from .agents import AgentSpec, PolicySpec, Schedule
from .densities import ModelKind
from .experiment import EvalConfig, ExperimentConfig
from .mdp import environment_from_section

DEFAULTS: Dict[str, Dict[str, str]] = {
    "experiment": {
        "name": "experiment",
        "total_steps": "300000",
        "n_trials": "20",
        "master_seed": "0",
    },
    "mdp": {
        "width": "6",
        "height": "3",
        "start": "2,0",
        "goal": "2,5",
        "cliff": "2,1 2,2 2,3 2,4",
        "slip_main": "0.7",
        "slip_other": "0.1",
        "goal_reward": "12.0",
        "cliff_reward": "deterministic(-10.0)",
        "discount": "0.95",
    },
    "agent": {
        "algorithm": "qq",
        "model": "gaussian",
        "q": "0.5",
        "target": "off",
        "gradient": "natural",
        "init_central": "0.0",
        "init_scale": "1.0",
        "qhat_init": "auto",
        "skew_range": "0.01, 0.99",
    },
    "policy": {
        "kind": "epsilon_greedy",
    },
    "schedules": {
        "learning_rate": "harmonic(30, 30)",
        "explore": "linear(1, 0)",
    },
    "eval": {
        "n_rollouts": "100000",
        "horizon": "auto",
        "quantiles": "0.01 0.1 0.3 0.5",
        "chunk": "8192",
    },
}

SECTION_ORDER = tuple(DEFAULTS)


class ConfigError(ValueError):
    pass


def preset_names() -> List[str]:
    root = resources.files("returndensity") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    path = resources.files("returndensity") / "presets" / f"{name}.ini"
    if not path.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return path.read_text()


def read_config_text(source: str) -> str:
    """Text of a config given a file path or a bundled preset name."""
    path = Path(source)
    if path.is_file():
        return path.read_text()
    if path.suffix == "" and "/" not in source:
        try:
            return preset_text(source)
        except ConfigError:
            pass
    raise ConfigError(f"config {source!r} is neither a readable file nor a bundled preset")


def parse(text: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - set(DEFAULTS[section])
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
        raw[section] = dict(parser[section])
    return raw


def resolve(raw: Mapping[str, Mapping[str, str]],
            overrides: Optional[Mapping[str, Mapping[str, str]]] = None) -> Dict[str, Dict[str, str]]:
    """Defaults, then the file, then ``overrides``."""
    out = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for layer in (raw, overrides or {}):
        for sec, keys in layer.items():
            if sec not in out:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in keys.items():
                if k not in out[sec]:
                    raise ConfigError(f"unknown key {sec}.{k}")
                out[sec][k] = str(v)
    return out


def to_text(resolved: Mapping[str, Mapping[str, str]]) -> str:
    lines = []
    for sec in SECTION_ORDER:
        lines.append(f"[{sec}]")
        for k in DEFAULTS[sec]:
            lines.append(f"{k} = {resolved[sec][k]}")
        lines.append("")
    return "\n".join(lines)


def build(resolved: Mapping[str, Mapping[str, str]]) -> ExperimentConfig:
    """Turn resolved sections into an :class:`ExperimentConfig`; ConfigError on bad values."""
    try:
        exp, ag, sch, ev = (resolved[k] for k in ("experiment", "agent", "schedules", "eval"))
        mdp = environment_from_section(resolved["mdp"])
        algorithm = ag["algorithm"]
        qhat_init = None if ag["qhat_init"] == "auto" else float(ag["qhat_init"])
        model = None if ag["model"] in ("", "-", "none") else ModelKind.parse(ag["model"])
        agent = AgentSpec(algorithm=algorithm, model=model, q=float(ag["q"]), target=ag["target"],
                          learning_rate=Schedule.parse(sch["learning_rate"]), gradient=ag["gradient"],
                          init_central=float(ag["init_central"]), init_scale=float(ag["init_scale"]),
                          qhat_init=qhat_init,
                          skew_range=tuple(float(x) for x in ag["skew_range"].replace(",", " ").split()))
        policy = PolicySpec(resolved["policy"]["kind"], Schedule.parse(sch["explore"]))
        # every schedule kind is monotone, so the endpoints bound it
        policy.check(np.array([policy.schedule.at(0, 1), policy.schedule.at(1, 1)]))
        horizon = ev["horizon"] if ev["horizon"] == "auto" else int(ev["horizon"])
        quantiles = tuple(float(x) for x in ev["quantiles"].replace(",", " ").split())
        evc = EvalConfig(int(ev["n_rollouts"]), horizon, quantiles, int(ev["chunk"]))
        return ExperimentConfig(mdp, agent, policy, int(exp["total_steps"]), int(exp["n_trials"]),
                                evc, int(exp["master_seed"]), exp["name"])
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load(source: str, overrides: Optional[Mapping[str, Mapping[str, str]]] = None):
    """Read, resolve and build.  Returns ``(ExperimentConfig, resolved sections)``."""
    resolved = resolve(parse(read_config_text(source)), overrides)
    return build(resolved), resolved
