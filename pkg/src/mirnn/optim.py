"""Adam updates and the validation-driven learning-rate halving schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import inf

import numpy as np

from .errors import DivergenceError, ShapeError


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ShapeError(f"learning rate must be positive, got {lr}")
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, arr in params.items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_apply(state: AdamState, params: dict, grads: dict) -> None:
    """One bias-corrected update, in place. Non-finite gradients abort."""
    if set(params) != set(state.m):
        raise ShapeError("optimizer state does not cover the given parameter set")
    # Validate everything before touching anything, so an abort leaves the
    # model exactly as it was at the last completed step.
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise DivergenceError(
                f"non-finite gradient for parameter {name} at step {state.step + 1}"
            )
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class LrSchedule:
    """Halve lr when validation BPC fails to improve for patience epochs."""

    lr: float
    patience_epochs: int = 2
    factor: float = 0.5
    best_val_bpc: float = inf
    bad_epochs: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.factor < 1 or self.patience_epochs < 1:
            raise ShapeError(
                f"bad schedule: lr={self.lr} factor={self.factor} patience={self.patience_epochs}"
            )


def schedule_step(sched: LrSchedule, epoch_val_bpc: float) -> float:
    """Fold one epoch's validation BPC into the schedule; returns current lr."""
    if not np.isfinite(epoch_val_bpc):
        raise DivergenceError(f"validation BPC is not finite: {epoch_val_bpc}")
    if epoch_val_bpc < sched.best_val_bpc:
        sched.best_val_bpc = epoch_val_bpc
        sched.bad_epochs = 0
    else:
        sched.bad_epochs += 1
        if sched.bad_epochs >= sched.patience_epochs:
            sched.lr *= sched.factor
            sched.bad_epochs = 0
    return sched.lr
