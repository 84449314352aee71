"""Loop orchestration: config, checkpoints, the engine, and metrics."""

from .checkpoint import IterationState
from .config import LoopConfig, PhaseConfig, load_config, load_preset
from .engine import METRIC_FIELDS, Engine, run_loop

__all__ = [
    "IterationState",
    "LoopConfig",
    "PhaseConfig",
    "load_config",
    "load_preset",
    "METRIC_FIELDS",
    "Engine",
    "run_loop",
]
