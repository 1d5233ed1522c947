"""Adam with decoupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import StateError
from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ParamGroup:
    name: str
    params: list[Tensor]
    lr: float
    weight_decay: float = 0.0


@dataclass
class OptimizerState:
    groups: list[ParamGroup]
    step: int = 0
    exp_avg: dict[int, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[int, np.ndarray] = field(default_factory=dict)


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if total > max_norm:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


def adam_step(state: OptimizerState, params: Sequence[Tensor] | None = None,
              grads: Sequence[np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, then ``theta -= lr * wd * theta``.

    The decay term uses the pre-update parameter. Parameters without a
    gradient are skipped but still age the step counter.
    """
    if params is not None:
        lookup = {id(p): g for p, g in zip(params, grads if grads is not None else [p.grad for p in params])}
    else:
        lookup = None
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    for group in state.groups:
        for p in group.params:
            g = lookup.get(id(p)) if lookup is not None else p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise StateError(f"gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
            m = state.exp_avg.get(p.node_id)
            if m is None:
                m = state.exp_avg[p.node_id] = np.zeros_like(p.data)
                state.exp_avg_sq[p.node_id] = np.zeros_like(p.data)
            v = state.exp_avg_sq[p.node_id]
            if m.shape != p.data.shape:
                raise StateError(f"optimizer moments {m.shape} do not match parameter {p.name} {p.shape}")
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            decay = group.lr * group.weight_decay * p.data
            p.data -= group.lr * update
            p.data -= decay


class Adam:
    """Thin stateful wrapper used by the trainer."""

    def __init__(self, groups: Iterable[ParamGroup]):
        self.state = OptimizerState(groups=list(groups))

    @property
    def groups(self) -> list[ParamGroup]:
        return self.state.groups

    def params(self) -> list[Tensor]:
        return [p for g in self.state.groups for p in g.params]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def clip(self, max_norm: float) -> float:
        return clip_global_norm([p.grad for p in self.params() if p.grad is not None], max_norm)

    def step(self) -> None:
        adam_step(self.state)
