"""Parametric return-density learning for tabular MDPs.

Quantile-criterion agents (q-Q learning, q-SARSA) fit Gaussian, Laplace or
skewed-Laplace return densities per state-action pair by natural-gradient TD
updates, and select actions on a chosen quantile of the fitted density.
"""
from ._accel import backend_name
from .agents import AgentSpec, AgentState, PolicySpec, Schedule, agent_step, greedy_path, select_action
from .densities import (
    GaussianParams,
    LaplaceParams,
    ModelKind,
    ParamTable,
    SkewedLaplaceParams,
    cdf,
    fisher_information,
    log_pdf,
    quantile,
    score,
)
from .experiment import EvalConfig, ExperimentConfig, run_experiment, run_trial, welch_t_test
from .mdp import Deterministic, NegativeGamma, ShiftedStudentT, TabularMdp, build_cliff_walk, step
from .updates import TdContext, ng_update, ng_update_numeric

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "AgentState", "Deterministic", "EvalConfig", "ExperimentConfig",
    "GaussianParams", "LaplaceParams", "ModelKind", "NegativeGamma", "ParamTable",
    "PolicySpec", "Schedule", "ShiftedStudentT", "SkewedLaplaceParams", "TabularMdp",
    "TdContext", "agent_step", "backend_name", "build_cliff_walk", "cdf",
    "fisher_information", "greedy_path", "log_pdf", "ng_update", "ng_update_numeric",
    "quantile", "run_experiment", "run_trial", "score", "select_action", "step",
    "welch_t_test", "__version__",
]
