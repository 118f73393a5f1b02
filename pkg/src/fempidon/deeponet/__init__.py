"""Physics-informed modified DeepONet with jet-based input derivatives."""

from .jet import Jet2, Layout
from .loss import LossContext, LossWeights, grad_loss, loss_total, residual_at
from .network import (Arch, DeepONetParams, MLPParams, Scaling, forward, forward_jet,
                      init_glorot, predict_grid)
from .optim import AdamConfig, Schedule, TrainState, adam_step

__all__ = [
    "Jet2", "Layout", "LossContext", "LossWeights", "grad_loss", "loss_total", "residual_at",
    "Arch", "DeepONetParams", "MLPParams", "Scaling", "forward", "forward_jet", "init_glorot",
    "predict_grid", "AdamConfig", "Schedule", "TrainState", "adam_step",
]
