"""Small numpy network toolkit with analytic gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    ConditionEmbedding,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    GroupNorm,
    Inject,
    Layer,
    Module,
    ReLU,
    SiLU,
    Upsample2x,
    sinusoidal_embedding,
)
from .losses import cross_entropy_loss, mse_loss
from .network import Sequential
from .optim import OptimState, adam, optimizer_step, sgd_momentum

__all__ = [
    "ConditionEmbedding", "Conv2d", "Dense", "Flatten", "GlobalAvgPool", "GroupNorm",
    "Inject", "Layer", "Module", "OptimState", "ReLU", "Sequential", "SiLU", "Upsample2x",
    "adam", "cross_entropy_loss", "load_checkpoint", "mse_loss", "optimizer_step",
    "save_checkpoint", "sgd_momentum", "sinusoidal_embedding",
]
