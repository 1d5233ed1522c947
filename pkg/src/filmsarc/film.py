"""Text-conditioned visual pipeline.

A GRU reads the raw text through its own embedding table and its final state
is mapped to one (gamma, beta) pair per residual block. The image goes
through a strided conv stem, FiLMed residual blocks, global average pooling
and a linear projection to the visual feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, ops
from .errors import ConfigError, DimensionError
from .nn import Linear, Module, parameter


class GRUCell(Module):
    """Single GRU cell; gate matrices are ``[hidden, input + hidden]``."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden_size)
        shape = (hidden_size, input_size + hidden_size)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_z = parameter(rng.uniform(-bound, bound, shape), "w_z")
        self.w_r = parameter(rng.uniform(-bound, bound, shape), "w_r")
        self.w_n = parameter(rng.uniform(-bound, bound, shape), "w_n")
        self.b_z = parameter(rng.uniform(-bound, bound, hidden_size), "b_z")
        self.b_r = parameter(rng.uniform(-bound, bound, hidden_size), "b_r")
        self.b_n = parameter(rng.uniform(-bound, bound, hidden_size), "b_n")

    def transposed(self) -> tuple[Tensor, Tensor, Tensor]:
        return ops.transpose(self.w_z), ops.transpose(self.w_r), ops.transpose(self.w_n)

    def step(self, x: Tensor, h: Tensor, weights=None) -> Tensor:
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size:
            raise DimensionError(
                f"gru_step expects input {self.input_size} and state {self.hidden_size}, "
                f"got {x.shape} and {h.shape}")
        wz, wr, wn = weights if weights is not None else self.transposed()
        xh = ops.concat([x, h], axis=-1)
        z = ops.sigmoid(ops.add(ops.matmul(xh, wz), self.b_z))
        r = ops.sigmoid(ops.add(ops.matmul(xh, wr), self.b_r))
        xrh = ops.concat([x, ops.mul(r, h)], axis=-1)
        n = ops.tanh(ops.add(ops.matmul(xrh, wn), self.b_n))
        return ops.add(ops.mul(ops.sub(1.0, z), n), ops.mul(z, h))


def gru_step(cell: GRUCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    return cell.step(ops.as_tensor(x_t), ops.as_tensor(h_prev))


@dataclass
class FiLMParams:
    """Per-block modulation vectors, each ``[C]`` or ``[B, C]``."""

    gammas: list[Tensor]
    betas: list[Tensor]

    def __len__(self) -> int:
        return len(self.gammas)

    def pairs(self):
        return list(zip(self.gammas, self.betas))

    @classmethod
    def identity(cls, n_blocks: int, channels: int, batch: int | None = None) -> "FiLMParams":
        shape = (channels,) if batch is None else (batch, channels)
        return cls([Tensor(np.ones(shape)) for _ in range(n_blocks)],
                   [Tensor(np.zeros(shape)) for _ in range(n_blocks)])


class FiLMGenerator(Module):
    """GRU over learned word vectors; the final state feeds one linear map.

    The output vector is laid out ``[gamma_1, beta_1, gamma_2, beta_2, ...]``.
    Gamma biases start at 1 so a fresh network modulates close to identity.
    """

    def __init__(self, vocab_size: int, block_channels: list[int], rng: np.random.Generator,
                 embed_dim: int = 100, hidden_size: int = 64):
        self.block_channels = list(block_channels)
        self.embedding = parameter(rng.normal(0.0, 0.5, (vocab_size, embed_dim)), "embedding")
        self.gru = GRUCell(embed_dim, hidden_size, rng)
        self.head = Linear(hidden_size, 2 * sum(block_channels), rng)
        bias = np.zeros(2 * sum(block_channels))
        offset = 0
        for c in block_channels:
            bias[offset: offset + c] = 1.0
            offset += 2 * c
        self.head.bias.data[:] = bias

    def encode(self, ids, pad_mask=None) -> Tensor:
        """Final GRU state, ``[B, hidden]``; padded steps carry the state through."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        b, steps = ids.shape
        keep = None if pad_mask is None else ~np.atleast_2d(np.asarray(pad_mask, dtype=bool))
        x = ops.embedding(self.embedding, ids)
        h = Tensor(np.zeros((b, self.gru.hidden_size)))
        weights = self.gru.transposed()
        for t in range(steps):
            h_new = self.gru.step(ops.getitem(x, (slice(None), t)), h, weights)
            if keep is None or keep[:, t].all():
                h = h_new
            else:
                m = keep[:, t:t + 1].astype(np.float64)
                h = ops.add(ops.mul(h_new, m), ops.mul(h, 1.0 - m))
        return h

    def split(self, out: Tensor) -> FiLMParams:
        gammas, betas = [], []
        offset = 0
        for c in self.block_channels:
            gammas.append(ops.getitem(out, (..., slice(offset, offset + c))))
            betas.append(ops.getitem(out, (..., slice(offset + c, offset + 2 * c))))
            offset += 2 * c
        return FiLMParams(gammas, betas)

    def __call__(self, ids, pad_mask=None) -> FiLMParams:
        return self.split(self.head(self.encode(ids, pad_mask)))


def film_generate(generator: FiLMGenerator, text_token_ids, pad_mask=None) -> FiLMParams:
    return generator(text_token_ids, pad_mask)


def film_modulate(features, gamma, beta) -> Tensor:
    return ops.scale_shift(features, gamma, beta)


def _he(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


class FiLMedBlock(Module):
    """``x + relu(FiLM(norm(conv3x3(relu(conv1x1(x))))))``."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = parameter(_he(rng, (channels, channels, 1, 1)), "conv1")
        self.conv1_bias = parameter(np.zeros(channels), "conv1_bias")
        self.conv3 = parameter(_he(rng, (channels, channels, 3, 3)), "conv3")
        self.last_activation: np.ndarray | None = None

    def __call__(self, x: Tensor, gamma, beta) -> Tensor:
        unbatched = x.ndim == 3
        if unbatched:
            x = ops.reshape(x, (1,) + x.shape)
            gamma = ops.reshape(ops.as_tensor(gamma), (1, -1))
            beta = ops.reshape(ops.as_tensor(beta), (1, -1))
        h = ops.relu(ops.conv2d(x, self.conv1, self.conv1_bias))
        h = ops.instance_norm(ops.conv2d(h, self.conv3, padding=1))
        h = ops.relu(film_modulate(h, gamma, beta))
        self.last_activation = h.data
        y = ops.add(x, h)
        return ops.reshape(y, y.shape[1:]) if unbatched else y


class VisualPipeline(Module):
    def __init__(self, channels: int, n_blocks: int, out_dim: int, rng: np.random.Generator,
                 in_channels: int = 3):
        self.channels = channels
        self.stem = parameter(_he(rng, (channels, in_channels, 3, 3)), "stem")
        self.stem_bias = parameter(np.zeros(channels), "stem_bias")
        self.blocks = [FiLMedBlock(channels, rng) for _ in range(n_blocks)]
        self.proj = Linear(channels, out_dim, rng)

    @property
    def block_channels(self) -> list[int]:
        return [self.channels] * len(self.blocks)

    def __call__(self, image, film: FiLMParams) -> Tensor:
        image = ops.as_tensor(image)
        unbatched = image.ndim == 3
        if unbatched:
            image = ops.reshape(image, (1,) + image.shape)
        if len(film) != len(self.blocks):
            raise DimensionError(f"{len(film)} FiLM pairs for {len(self.blocks)} blocks")
        if min(image.shape[-2:]) < self.stem.shape[-1]:
            raise ConfigError(f"image {image.shape[-2:]} is smaller than the "
                              f"{self.stem.shape[-1]}x{self.stem.shape[-1]} stem kernel")
        x = ops.relu(ops.conv2d(image, self.stem, self.stem_bias, stride=2, padding=1))
        for block, (gamma, beta) in zip(self.blocks, film.pairs()):
            if unbatched:
                gamma = ops.reshape(ops.as_tensor(gamma), (1, -1))
                beta = ops.reshape(ops.as_tensor(beta), (1, -1))
            x = block(x, gamma, beta)
        q = self.proj(ops.mean(x, axis=(-2, -1)))
        return ops.reshape(q, q.shape[1:]) if unbatched else q

    def activation_means(self) -> list[np.ndarray]:
        """Per-block, per-channel spatial means of the last post-FiLM activations."""
        return [blk.last_activation.mean(axis=(-2, -1)) for blk in self.blocks
                if blk.last_activation is not None]


def visual_forward(pipeline: VisualPipeline, image, film: FiLMParams) -> Tensor:
    return pipeline(image, film)
