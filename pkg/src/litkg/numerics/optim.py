"""Adam with bias correction, operating in place on named parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class TrainingError(RuntimeError):
    def __init__(self, message: str, param: str | None = None):
        super().__init__(message)
        self.param = param


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> AdamState:
    """Apply one Adam update to ``params`` (mutated in place).

    Parameters without an entry in ``grads`` are treated as having zero
    gradient: their moments still decay, matching a dense optimizer.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise TrainingError(f"gradient shape {g.shape} != parameter shape "
                                f"{params[name].shape} for {name}", name)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}", name)

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        v *= b2
        if g is not None:
            m += (1.0 - b1) * g
            v += (1.0 - b2) * (g * g)
        if state.lr == 0.0:
            continue
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state
