"""Stable and stabilizable lifted linear models learned by unconstrained optimization.

The lifted matrix is built from free parameters so that it is Schur stable
(or, with inputs, a stabilizable pair with a recoverable feedback gain) for
every parameter value; training is plain gradient descent with no
projection step.
"""
__version__ = "0.1.0"

from .koopman import (StableKoopmanModel, StabilizableKoopmanModel, load_model, save_model,
                      rollout_autonomous, rollout_closedloop, rollout_openloop)
from .stableparam import (StableParams, StabilizableParams, embed_stable, realize_stable,
                          realize_stabilizable, recover_feedback_gain)
from .train import TrainConfig, fit_imitation, fit_sysid, loocv

__all__ = [
    "StableKoopmanModel", "StabilizableKoopmanModel", "load_model", "save_model",
    "rollout_autonomous", "rollout_closedloop", "rollout_openloop",
    "StableParams", "StabilizableParams", "embed_stable", "realize_stable",
    "realize_stabilizable", "recover_feedback_gain",
    "TrainConfig", "fit_imitation", "fit_sysid", "loocv",
]
