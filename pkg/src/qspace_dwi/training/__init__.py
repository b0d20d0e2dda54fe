"""Sample preparation, the alternating GAN loop and checkpoints."""

from qspace_dwi.training.checkpoint import (
    CheckpointData,
    load_checkpoint,
    load_generator,
    save_checkpoint,
)
from qspace_dwi.training.samples import (
    Batch,
    SamplePool,
    TrainSample,
    augment_sample,
    build_samples,
    collate,
)
from qspace_dwi.training.trainer import (
    TrainState,
    init_train_state,
    run_training,
    train_step,
    write_loss_csv,
)

__all__ = [
    "Batch",
    "CheckpointData",
    "SamplePool",
    "TrainSample",
    "TrainState",
    "augment_sample",
    "build_samples",
    "collate",
    "init_train_state",
    "load_checkpoint",
    "load_generator",
    "run_training",
    "save_checkpoint",
    "train_step",
    "write_loss_csv",
]
