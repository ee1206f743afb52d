"""Function-conditioned embedding head and its training loop."""

from .model import (
    EmbeddingError,
    ModelConfig,
    embed_pixels,
    embed_backward,
    fuse_blocks,
    init_params,
    sample_feature,
    softmax,
)
from .losses import loss_func, loss_mask, loss_spatial
from .training import (
    AdamState,
    TrainConfig,
    TrainingData,
    TrainObject,
    LoadedView,
    adam_step,
    grad,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__all__ = [
    "AdamState",
    "EmbeddingError",
    "LoadedView",
    "ModelConfig",
    "TrainConfig",
    "TrainObject",
    "TrainingData",
    "adam_step",
    "embed_backward",
    "embed_pixels",
    "fuse_blocks",
    "grad",
    "init_params",
    "load_checkpoint",
    "loss_func",
    "loss_mask",
    "loss_spatial",
    "sample_feature",
    "save_checkpoint",
    "softmax",
    "total_loss",
    "train",
]
