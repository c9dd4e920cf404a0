"""Handover-optimisation laboratory.

A synthetic radio trace generator, the 3GPP A2/A3 handover protocol with
link monitoring, a gym-style environment over it, a small numpy PPO agent
and the evaluation metrics used to compare the two.
"""

from .env import EnvConfig, HandoverEnv
from .evalkit import EvalReport, compare, evaluate_policy, gamma_metric
from .neural import MlpParams
from .ppo import PpoConfig, Stage, act_greedy, train
from .protocol import EventKind, Phase, ProtocolConfig, run_baseline
from .tracegen import RadioMap, RadioTrace, RouteSpec, build_dataset, default_map, random_route

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "HandoverEnv", "EvalReport", "compare", "evaluate_policy", "gamma_metric",
    "MlpParams", "PpoConfig", "Stage", "act_greedy", "train", "EventKind", "Phase",
    "ProtocolConfig", "run_baseline", "RadioMap", "RadioTrace", "RouteSpec", "build_dataset",
    "default_map", "random_route",
]
