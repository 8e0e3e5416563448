from .losses import (
    LossDiverged,
    attention_loss,
    attention_target,
    control_loss,
    seg_loss,
    total_loss,
    waypoint_loss,
)
from .loop import TrainConfig, batch_arrays, evaluate_loss, split_episodes, train
