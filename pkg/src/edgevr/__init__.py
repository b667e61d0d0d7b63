"""Discrete-event simulator of a multi-user wireless VR pipeline with
edge-assisted rendering, exposed as a constrained decision process."""

from .config import ConfigError, RunConfig
from .env import Action, ObservationLayout, StepResult, VREnv
from .workload import TraceSet, generate_traces, load_traces, save_traces

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ConfigError",
    "ObservationLayout",
    "RunConfig",
    "StepResult",
    "TraceSet",
    "VREnv",
    "generate_traces",
    "load_traces",
    "save_traces",
    "__version__",
]
