"""Selective-delegation orchestration runtime.

Parse and validate trajectories, run subtask DAGs against a priced worker
pool, score them with a verifier-gated reward, and compute group-relative
advantages for an external trainer.
"""

from .config import Config, load_config
from .errors import OrchestraError
from .grammar import (
    TrajectoryDoc,
    classify_behaviour,
    parse_trajectory,
    serialize_trajectory,
    validate_trajectory,
)
from .pool import PoolRegistry, anonymize_pool, load_registry
from .reward import NormalizerState, terminal_reward
from .scheduler import run_episode

__version__ = "0.1.0"

__all__ = [
    "Config",
    "NormalizerState",
    "OrchestraError",
    "PoolRegistry",
    "TrajectoryDoc",
    "anonymize_pool",
    "classify_behaviour",
    "load_config",
    "load_registry",
    "parse_trajectory",
    "run_episode",
    "serialize_trajectory",
    "terminal_reward",
    "validate_trajectory",
]
