"""SGD with momentum, decoupled-from-nothing classic weight decay, and a
cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    """Asked for a learning rate past the end of the schedule."""


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine from lr0 at step 0 down to 0 at step == total_steps."""
    if total_steps < 1:
        raise ScheduleError(f"total_steps must be positive, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ScheduleError(f"step {step} outside schedule of {total_steps} steps")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class SgdState:
    """Velocity buffers keyed like the parameter dict.  ``no_decay`` names
    parameters whose gradient skips the weight-decay term."""

    cfg: OptimConfig
    velocities: dict[str, np.ndarray]
    no_decay: frozenset[str]

    @classmethod
    def create(cls, params: dict[str, np.ndarray], cfg: OptimConfig,
               no_decay=()) -> "SgdState":
        unknown = set(no_decay) - set(params)
        if unknown:
            raise KeyError(f"no_decay names unknown parameters: {sorted(unknown)}")
        vel = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(cfg, vel, frozenset(no_decay))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: SgdState, lr: float) -> None:
    """One in-place update: g = grad (+ wd * p), v = mom * v + g, p -= lr * v."""
    if set(params) != set(state.velocities):
        raise KeyError("parameter names do not match the optimizer state")
    for name, p in params.items():
        g = grads[name]
        if state.cfg.weight_decay and name not in state.no_decay:
            g = g + p.dtype.type(state.cfg.weight_decay) * p
        v = state.velocities[name]
        v *= p.dtype.type(state.cfg.momentum)
        v += g
        p -= p.dtype.type(lr) * v
