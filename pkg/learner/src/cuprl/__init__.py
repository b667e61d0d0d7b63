"""Constrained policy-gradient learner for the edgevr environment service.

The learner talks to a running ``edgevr serve-env`` process over its
newline-delimited JSON protocol and never imports the simulator. Training
alternates a clipped-surrogate reward ascent with a penalised projection
step whose multiplier follows the discounted cost overshoot.
"""

from .client import EnvClient, SessionPool, WireError
from .gae import cost_return, gae
from .trainer import Hyperparams, Trainer, train
from .updates import stepsize_update

__all__ = [
    "EnvClient",
    "SessionPool",
    "WireError",
    "Hyperparams",
    "Trainer",
    "cost_return",
    "gae",
    "stepsize_update",
    "train",
]
