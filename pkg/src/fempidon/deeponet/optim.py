"""Adam with a staircase exponential learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import DeepONetParams


@dataclass(frozen=True)
class Schedule:
    lr0: float = 1e-3
    decay_steps: int = 5000
    decay_rate: float = 0.95

    def __post_init__(self):
        if not (self.lr0 > 0 and self.decay_steps > 0 and 0 < self.decay_rate <= 1):
            raise ValueError("invalid learning-rate schedule")

    def __call__(self, step: int) -> float:
        return self.lr0 * self.decay_rate ** (step // self.decay_steps)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainState:
    params: DeepONetParams
    m: DeepONetParams
    v: DeepONetParams
    step: int = 0
    schedule: Schedule = Schedule()
    adam: AdamConfig = AdamConfig()

    @classmethod
    def fresh(cls, params: DeepONetParams, schedule: Schedule = Schedule(),
              adam: AdamConfig = AdamConfig()):
        params = params.astype(np.float64)
        return cls(params, params.zeros_like(), params.zeros_like(), 0, schedule, adam)

    @property
    def lr(self):
        return self.schedule(self.step)


def adam_step(state: TrainState, grad: DeepONetParams) -> TrainState:
    """One bias-corrected Adam update, in place on the state's float64 tensors.

    The learning rate used is the schedule evaluated at the pre-increment step.
    """
    b1, b2, eps = state.adam.beta1, state.adam.beta2, state.adam.eps
    lr = state.lr
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v, g in zip(state.params.tensors(), state.m.tensors(), state.v.tensors(),
                          grad.tensors()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        g = np.asarray(g, dtype=np.float64)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = t
    return state
