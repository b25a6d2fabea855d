"""Uniformly conservative exploration for tabular episodic MDPs."""

from .envs import InventoryParams, RandomMdpParams, build_env, build_inventory_mdp, build_random_ergodic_mdp
from .mdp import ConfigurationError, ContractViolation, TabularMdp, exact_optimal, exact_policy_eval
from .shield import AgentConfig, MetaEpisodeAbort, run_agent

__all__ = [
    "AgentConfig",
    "ConfigurationError",
    "ContractViolation",
    "InventoryParams",
    "MetaEpisodeAbort",
    "RandomMdpParams",
    "TabularMdp",
    "build_env",
    "build_inventory_mdp",
    "build_random_ergodic_mdp",
    "exact_optimal",
    "exact_policy_eval",
    "run_agent",
]

__version__ = "0.1.0"
