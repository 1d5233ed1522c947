"""Bilinear co-attention between text features and attribute features.

All functions accept either single examples (``P: [N, d]``) or batches
(``P: [B, N, d]``). Masks use True for padded positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, ops
from .errors import DimensionError
from .nn import Module, parameter


@dataclass
class AttentionOutput:
    affinity: Tensor
    alpha: Tensor
    q_att: Tensor


def affinity(p, q, w) -> Tensor:
    """``tanh(P W Q^T)``."""
    p, q, w = ops.as_tensor(p), ops.as_tensor(q), ops.as_tensor(w)
    if p.shape[-1] != w.shape[0] or q.shape[-1] != w.shape[1]:
        raise DimensionError(f"affinity shapes disagree: P {p.shape}, W {w.shape}, Q {q.shape}")
    return ops.tanh(ops.matmul(ops.matmul(p, w), ops.swapaxes(q, -1, -2)))


def attention_pool(c, text_pad_mask=None, attr_pad_mask=None) -> Tensor:
    """Column max over unmasked text rows; masked attribute columns are zeroed."""
    alpha = ops.maxpool_cols(c, text_pad_mask)
    if attr_pad_mask is not None:
        keep = ~np.asarray(attr_pad_mask, dtype=bool)
        alpha = ops.mul(alpha, keep.astype(np.float64))
    return alpha


def attend(alpha, q) -> Tensor:
    """``sum_j alpha[j] * Q[j]``."""
    alpha, q = ops.as_tensor(alpha), ops.as_tensor(q)
    if alpha.shape[-1] != q.shape[-2]:
        raise DimensionError(f"attend: alpha {alpha.shape} does not match Q {q.shape}")
    if alpha.ndim == 1:
        return ops.matmul(alpha, q)
    out = ops.matmul(ops.reshape(alpha, alpha.shape[:-1] + (1, alpha.shape[-1])), q)
    return ops.reshape(out, out.shape[:-2] + (q.shape[-1],))


def coattention_forward(p, q, w, text_pad_mask=None, attr_pad_mask=None) -> AttentionOutput:
    c = affinity(p, q, w)
    alpha = attention_pool(c, text_pad_mask, attr_pad_mask)
    return AttentionOutput(c, alpha, attend(alpha, q))


class CoAttention(Module):
    def __init__(self, d: int, rng: np.random.Generator, std: float | None = None):
        std = 0.2 / d if std is None else std
        self.weight = parameter(rng.normal(0.0, std, (d, d)), "weight")

    def __call__(self, p, q, text_pad_mask=None, attr_pad_mask=None) -> AttentionOutput:
        return coattention_forward(p, q, self.weight, text_pad_mask, attr_pad_mask)
