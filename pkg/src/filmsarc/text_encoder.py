"""Mini transformer encoder producing text features, attribute features and [CLS]."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autograd import Tensor, ops
from .errors import ConfigError, MaskError, VocabularyError
from .nn import LayerNorm, Linear, Module, parameter

PAD, CLS, SEP = "[PAD]", "[CLS]", "[SEP]"
RESERVED = (PAD, CLS, SEP)
TEXT_SEGMENT, ATTRIBUTE_SEGMENT = 0, 1


class Vocabulary:
    """Dense token-to-id map whose first three ids are ``[PAD] [CLS] [SEP]``."""

    pad_id, cls_id, sep_id = 0, 1, 2

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}, got {tokens[:3]}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.split()

    def encode(self, tokens: Iterable[str]) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise VocabularyError(f"out-of-vocabulary token {exc.args[0]!r}") from None

    def wrap(self, tokens: Iterable[str]) -> list[int]:
        """``[CLS] tokens [SEP]`` as ids."""
        return [self.cls_id, *self.encode(tokens), self.sep_id]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln != ""])


class EmbeddingTable(Module):
    """Token, position and segment tables whose looked-up rows are summed."""

    def __init__(self, vocab_size: int, d: int, max_positions: int, rng: np.random.Generator,
                 token_std: float = 1.0, position_std: float = 0.1):
        self.token = parameter(rng.normal(0.0, token_std, (vocab_size, d)), "token")
        self.position = parameter(rng.normal(0.0, position_std, (max_positions, d)), "position")
        self.segment = parameter(np.zeros((2, d)), "segment")

    @property
    def max_positions(self) -> int:
        return self.position.shape[0]

    def __call__(self, ids: np.ndarray, segment_id: int) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        n = ids.shape[-1]
        if n > self.max_positions:
            raise ConfigError(f"sequence length {n} exceeds position table size {self.max_positions}")
        x = ops.embedding(self.token, ids)
        x = ops.add(x, ops.getitem(self.position, slice(0, n)))
        return ops.add(x, ops.getitem(self.segment, segment_id))


def embed_sequence(table: EmbeddingTable, token_ids, segment_id: int) -> Tensor:
    return table(token_ids, segment_id)


class EncoderLayer(Module):
    """Post-norm transformer layer: self-attention and a GELU feed-forward."""

    def __init__(self, d: int, num_heads: int, rng: np.random.Generator, dropout: float = 0.1):
        if d % num_heads:
            raise ConfigError(f"hidden size {d} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.dropout = dropout
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff1 = Linear(d, 4 * d, rng)
        self.ff2 = Linear(4 * d, d, rng)
        self.norm2 = LayerNorm(d)
        self.last_attention: np.ndarray | None = None

    def _heads(self, x: Tensor, b: int, n: int) -> Tensor:
        dh = x.shape[-1] // self.num_heads
        return ops.transpose(ops.reshape(x, (b, n, self.num_heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, pad_mask=None, rng: np.random.Generator | None = None) -> Tensor:
        unbatched = x.ndim == 2
        if unbatched:
            x = ops.reshape(x, (1,) + x.shape)
            pad_mask = None if pad_mask is None else np.asarray(pad_mask)[None]
        b, n, d = x.shape
        if pad_mask is None:
            pad_mask = np.zeros((b, n), dtype=bool)
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.all(axis=-1).any():
            raise MaskError("encoder input has a sequence with every position masked")
        training = self.training

        q = self._heads(self.query(x), b, n)
        k = self._heads(self.key(x), b, n)
        v = self._heads(self.value(x), b, n)
        scores = ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d // self.num_heads))
        attn = ops.masked_softmax(scores, pad_mask[:, None, None, :])
        self.last_attention = attn.data
        attn = ops.dropout(attn, self.dropout, rng, training)
        ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
        x = self.norm1(ops.add(x, self.out(ctx)))

        f = self.ff2(ops.gelu(self.ff1(x)))
        f = ops.dropout(f, self.dropout, rng, training)
        x = self.norm2(ops.add(x, f))
        return ops.reshape(x, (n, d)) if unbatched else x


def encoder_layer_forward(layer: EncoderLayer, x: Tensor, pad_mask=None, rng=None) -> Tensor:
    return layer(x, pad_mask, rng)


class TextEncoder(Module):
    """Embedding tables plus an encoder stack with a configurable text tap.

    Text features come from layer ``layer_tap`` (1-based); attribute features
    always come from the last layer.
    """

    def __init__(self, vocab_size: int, d: int = 64, num_layers: int = 2, num_heads: int = 4,
                 layer_tap: int = 1, max_len: int = 360, dropout: float = 0.1,
                 rng: np.random.Generator | None = None):
        if not 1 <= layer_tap <= num_layers:
            raise ConfigError(f"layer_tap {layer_tap} outside 1..{num_layers}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.layer_tap = layer_tap
        self.embeddings = EmbeddingTable(vocab_size, d, max_len, rng)
        self.layers = [EncoderLayer(d, num_heads, rng, dropout) for _ in range(num_layers)]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def run(self, ids, pad_mask, segment_id: int, depth: int,
            rng: np.random.Generator | None = None) -> Tensor:
        x = self.embeddings(ids, segment_id)
        for layer in self.layers[:depth]:
            x = layer(x, pad_mask, rng)
        return x

    def encode_text(self, ids, pad_mask=None, rng=None) -> tuple[Tensor, Tensor]:
        """Return ``(P, cls)``; ``cls`` is row 0 of ``P``."""
        p = self.run(ids, pad_mask, TEXT_SEGMENT, self.layer_tap, rng)
        return p, ops.getitem(p, (..., 0, slice(None)))

    def encode_attributes(self, ids, pad_mask=None, rng=None) -> Tensor:
        return self.run(ids, pad_mask, ATTRIBUTE_SEGMENT, self.num_layers, rng)
