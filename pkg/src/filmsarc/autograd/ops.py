"""Differentiable primitives.

Each function takes Tensors (or plain arrays/scalars, treated as constants)
and returns a Tensor whose backward closure maps the upstream gradient to one
gradient per input. Shapes follow numpy semantics; ``add``/``mul`` reduce
broadcast gradients back to operand shapes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError, MaskError, ShapeError, VocabularyError
from .tensor import Tensor

LN_EPS = 1e-5


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; 1-D operands are promoted."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs arrays, got shapes {a.shape} and {b.shape}")
    ad = a.data[None, :] if a.ndim == 1 else a.data
    bd = b.data[:, None] if b.ndim == 1 else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = ad @ bd
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def backward(g):
        g2 = g
        if b.ndim == 1:
            g2 = g2[..., None]
        if a.ndim == 1:
            g2 = g2[..., None, :]
        ga = _unbroadcast(g2 @ np.swapaxes(bd, -1, -2), ad.shape).reshape(a.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g2, bd.shape).reshape(b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "matmul")


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return Tensor._from_op(np.transpose(a.data, axes), (a,),
                           lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.swapaxes(a.data, ax1, ax2), (a,),
                           lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- pointwise nonlinearities ------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return Tensor._from_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return Tensor._from_op(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return Tensor._from_op(y, (a,), backward, "gelu")


def scale_shift(f, gamma, beta) -> Tensor:
    """Per-channel affine map over spatial axes: ``gamma[c] * f[c] + beta[c]``.

    ``f`` is ``[..., C, H, W]``; ``gamma`` and ``beta`` are ``[..., C]`` with the
    same leading dims as ``f``.
    """
    f, gamma, beta = as_tensor(f), as_tensor(gamma), as_tensor(beta)
    if f.ndim < 3 or gamma.shape != f.shape[:-2] or beta.shape != f.shape[:-2]:
        raise DimensionError(
            f"scale_shift channel mismatch: features {f.shape}, gamma {gamma.shape}, beta {beta.shape}")
    gd = gamma.data[..., None, None]
    out = gd * f.data + beta.data[..., None, None]

    def backward(g):
        return g * gd, (g * f.data).sum(axis=(-2, -1)), g.sum(axis=(-2, -1))

    return Tensor._from_op(out, (f, gamma, beta), backward, "scale_shift")


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "gelu": gelu}


def elementwise(kind: str, *operands) -> Tensor:
    """Checked entry point for the pointwise op family.

    Binary kinds accept identical shapes, a scalar, or a second operand whose
    shape is a trailing suffix of the first (bias broadcast).
    """
    if kind in _ELEMENTWISE:
        (x,) = operands
        return _ELEMENTWISE[kind](x)
    if kind == "scale_shift":
        return scale_shift(*operands)
    if kind not in ("add", "mul"):
        raise ValueError(f"unknown elementwise kind {kind!r}")
    a, b = (as_tensor(o) for o in operands)
    if not (a.shape == b.shape or b.ndim == 0 or a.shape[a.ndim - b.ndim:] == b.shape):
        raise ShapeError(f"unsupported broadcast for {kind}: {a.shape} with {b.shape}")
    return add(a, b) if kind == "add" else mul(a, b)


# -- reductions with masks ---------------------------------------------------

def maxpool_cols(c, row_mask=None) -> Tensor:
    """Column-wise max over unmasked rows: ``[..., N, M] -> [..., M]``.

    ``row_mask`` is ``[..., N]`` with True marking rows to exclude. Gradient
    goes to the first maximising row of each column.
    """
    c = as_tensor(c)
    x = c.data
    if row_mask is not None:
        row_mask = np.asarray(row_mask, dtype=bool)
        if row_mask.all(axis=-1).any():
            raise MaskError("max-pool over an axis whose rows are all masked")
        x = np.where(row_mask[..., :, None], -np.inf, x)
    idx = np.argmax(x, axis=-2)[..., None, :]
    out = np.take_along_axis(c.data, idx, axis=-2)[..., 0, :]

    def backward(g):
        full = np.zeros_like(c.data)
        np.put_along_axis(full, idx, g[..., None, :], axis=-2)
        return (full,)

    return Tensor._from_op(out, (c,), backward, "maxpool_cols")


def masked_softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` True entries get zero weight."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if mask.all(axis=-1).any():
            raise MaskError("softmax over a row whose keys are all masked")
        z = np.where(mask, -np.inf, z)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward, "softmax")


def _normalize_last(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return centered * inv, inv


def _normalize_last_backward(gxhat: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match {d}")
    xhat, inv = _normalize_last(x.data, eps)
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gx = _normalize_last_backward(g * gain.data, xhat, inv)
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (x, gain, bias), backward, "layer_norm")


def instance_norm(x, eps: float = LN_EPS) -> Tensor:
    """Per-sample, per-channel standardisation over the spatial axes, no affine."""
    x = as_tensor(x)
    shape = x.shape
    flat = x.data.reshape(shape[:-2] + (-1,))
    xhat, inv = _normalize_last(flat, eps)

    def backward(g):
        return (_normalize_last_backward(g.reshape(xhat.shape), xhat, inv).reshape(shape),)

    return Tensor._from_op(xhat.reshape(shape), (x,), backward, "instance_norm")


# -- lookups, convolution, regularisation, loss ------------------------------

def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise VocabularyError(f"token id {int(bad)} outside vocabulary of size {vocab}")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor._from_op(table.data[ids], (table,), backward, "embedding")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ConfigError(
            f"convolution underflow: size {size}, kernel {kernel}, stride {stride}, padding {padding}")
    return out


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation of ``[B, C, H, W]`` (or ``[C, H, W]``) input."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), weight, bias, stride, padding)
        return reshape(out, out.shape[1:])
    b_, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1: stride, : stride * (wo - 1) + 1: stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b_ * ho * wo, c_in * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(b_, ho, wo, c_out).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(b_, ho, wo, c_in, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i: i + stride * (ho - 1) + 1: stride,
                    j: j + stride * (wo - 1) + 1: stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding: padding + h, padding: padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training mode."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy computed from logits in log-sum-exp form."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    z = logits.data
    if y.shape != z.shape:
        raise DimensionError(f"bce targets {y.shape} do not match logits {z.shape}")
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)

    def backward(g):
        return (g * (_sigmoid(z) - y) / n,)

    return Tensor._from_op(np.asarray(losses.sum() / n), (logits,), backward, "bce")
