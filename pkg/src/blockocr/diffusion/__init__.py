"""Forward masking process, ELBO-weighted objective and training loops."""
from .batch import MaskedBatch, collate, make_batch
from .config import TrainingConfig, Variant
from .objective import batch_loss, masked_loss
from .schedule import T_MIN, NoiseSchedule, ScheduleFamily, corrupt, loss_weight, sample_timesteps
from .train import LossRecord, canvas_for, lr_at, train

__all__ = [
    "LossRecord", "MaskedBatch", "NoiseSchedule", "ScheduleFamily", "T_MIN", "TrainingConfig", "Variant",
    "batch_loss", "canvas_for", "collate", "corrupt", "loss_weight", "lr_at", "make_batch", "masked_loss",
    "sample_timesteps", "train",
]
