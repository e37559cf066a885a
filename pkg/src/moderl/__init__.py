"""Actor-critic agents with expectile-moderated TD targets, toy control
environments, a tabular operator laboratory, and an experiment harness."""

from .agents import ALGORITHMS, AgentConfig, default_agent_config, make_agent
from .envs import evaluate_policy, make_env
from .expectile import expectile_loss, scalar_expectile
from .harness import RunConfig, aggregate, run_experiment
from .replay import Batch, ReplayBuffer, Transition
from .tabular import MDPTable, bias_probe, contraction_check, fixed_point

__all__ = [
    "ALGORITHMS",
    "AgentConfig",
    "Batch",
    "MDPTable",
    "ReplayBuffer",
    "RunConfig",
    "Transition",
    "aggregate",
    "bias_probe",
    "contraction_check",
    "default_agent_config",
    "evaluate_policy",
    "expectile_loss",
    "fixed_point",
    "make_agent",
    "make_env",
    "run_experiment",
    "scalar_expectile",
]
