from .agent import (
    SacAgent,
    SacConfig,
    UpdateInfo,
    VectorFeatures,
    log_prob_of_action,
    polyak_update,
    squashed_gaussian,
)
from .loop import TrainingDiverged, train_loop
from .replay import Batch, ReplayBuffer

__all__ = [
    "SacAgent", "SacConfig", "UpdateInfo", "VectorFeatures", "log_prob_of_action",
    "polyak_update", "squashed_gaussian", "TrainingDiverged", "train_loop", "Batch",
    "ReplayBuffer",
]
