"""Fusion classifier assembling the visual, [CLS] and co-attention features."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autograd import Tensor, ops
from .coattention import AttentionOutput, CoAttention
from .data import Batch
from .errors import CheckpointError, ConfigError, ContractError, DimensionError
from .film import FiLMGenerator, FiLMParams, VisualPipeline
from .nn import Module, parameter
from .text_encoder import TextEncoder, Vocabulary


class Variant(str, enum.Enum):
    FULL = "full"
    NO_FILM = "no_film"
    NO_COATTENTION = "no_coattention"
    NO_CLS = "no_cls"
    TEXT_ONLY = "text_only"
    IMAGE_ONLY = "image_only"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("-", "_")
        aliases = {"no_coatt": "no_coattention", "no_co_attention": "no_coattention"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown variant {name!r}; expected one of "
                              f"{', '.join(v.value for v in cls)}") from None

    @property
    def uses_visual(self) -> bool:
        return self in (Variant.FULL, Variant.NO_COATTENTION, Variant.NO_CLS, Variant.IMAGE_ONLY)

    @property
    def uses_film(self) -> bool:
        return self in (Variant.FULL, Variant.NO_COATTENTION, Variant.NO_CLS)

    @property
    def uses_cls(self) -> bool:
        return self in (Variant.FULL, Variant.NO_FILM, Variant.NO_COATTENTION, Variant.TEXT_ONLY)

    @property
    def uses_coattention(self) -> bool:
        return self in (Variant.FULL, Variant.NO_FILM, Variant.NO_CLS)

    @property
    def uses_encoder(self) -> bool:
        return self.uses_cls or self.uses_coattention


@dataclass
class ModelConfig:
    vocab_size: int = 256
    d: int = 64
    num_layers: int = 2
    num_heads: int = 4
    layer_tap: int = 1
    max_len: int = 360
    gru_embed: int = 100
    gru_hidden: int = 64
    channels: int = 32
    n_blocks: int = 4
    q_film_dim: int = 1024
    dropout: float = 0.1
    variant: str = "full"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def fusion_dim(self) -> int:
        v = Variant.parse(self.variant)
        return self.q_film_dim * v.uses_visual + self.d * (v.uses_cls + v.uses_coattention)


class FusionHead(Module):
    def __init__(self, fusion_dim: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, 0.01, fusion_dim), "weight")
        self.bias = parameter(np.zeros(()), "bias")

    @property
    def fusion_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Prediction:
    logit: Tensor
    attention: AttentionOutput | None = None
    film: FiLMParams | None = None

    @property
    def y_hat(self) -> np.ndarray:
        return ops._sigmoid(self.logit.data)

    @property
    def labels(self) -> np.ndarray:
        """Label 1 iff the logit is strictly positive (ties go to 0)."""
        return (self.logit.data > 0).astype(np.int64)


def fuse_concat(q_film, cls, q_att, variant: Variant | str = Variant.FULL) -> Tensor:
    """Concatenate in the fixed order (visual, CLS, attended attributes)."""
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    parts = []
    for needed, part, label in ((variant.uses_visual, q_film, "q_film"),
                                (variant.uses_cls, cls, "cls"),
                                (variant.uses_coattention, q_att, "q_att")):
        if needed:
            if part is None:
                raise ContractError(f"variant {variant.value} needs {label}")
            parts.append(ops.as_tensor(part))
    return ops.concat(parts, axis=-1)


def classify(h, head: FusionHead) -> Prediction:
    h = ops.as_tensor(h)
    if h.shape[-1] != head.fusion_dim:
        raise DimensionError(f"fusion vector has {h.shape[-1]} entries, head expects {head.fusion_dim}")
    return Prediction(ops.add(ops.matmul(h, head.weight), head.bias))


def bce_loss(logit, y) -> Tensor:
    """Binary cross-entropy from the logit (mean over entries)."""
    logit = ops.as_tensor(logit)
    return ops.bce_with_logits(logit, np.broadcast_to(np.asarray(y, dtype=np.float64), logit.shape))


class SarcasmModel(Module):
    """Only the components the variant needs are built (and checkpointed)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.variant = Variant.parse(config.variant)
        rng = np.random.default_rng(seed)
        v = self.variant
        self.encoder = (TextEncoder(config.vocab_size, config.d, config.num_layers, config.num_heads,
                                    config.layer_tap, config.max_len, config.dropout, rng)
                        if v.uses_encoder else None)
        self.visual = (VisualPipeline(config.channels, config.n_blocks, config.q_film_dim, rng)
                       if v.uses_visual else None)
        self.film = (FiLMGenerator(config.vocab_size, self.visual.block_channels, rng,
                                   config.gru_embed, config.gru_hidden)
                     if v.uses_film else None)
        self.coattention = CoAttention(config.d, rng) if v.uses_coattention else None
        self.head = FusionHead(config.fusion_dim(), rng)

    def forward(self, batch: Batch, rng: np.random.Generator | None = None) -> Prediction:
        v, training = self.variant, self.training
        q_film = cls = q_att = None
        attention = film = None
        if v.uses_encoder:
            p, cls = self.encoder.encode_text(batch.text_ids, batch.text_pad, rng)
            if v.uses_coattention:
                q = self.encoder.encode_attributes(batch.attr_ids, batch.attr_pad, rng)
                attention = self.coattention(p, q, batch.text_pad, batch.attr_pad)
                q_att = attention.q_att
        if v.uses_visual:
            if v.uses_film:
                film = self.film(batch.gru_ids, batch.gru_pad)
            else:
                film = FiLMParams.identity(self.config.n_blocks, self.config.channels, len(batch))
            q_film = self.visual(batch.images, film)
        h = fuse_concat(q_film, cls, q_att, v)
        h = ops.dropout(h, self.config.dropout, rng, training)
        pred = classify(h, self.head)
        pred.attention = attention
        pred.film = film if v.uses_film else None
        return pred

    __call__ = forward

    def loss(self, batch: Batch, rng: np.random.Generator | None = None) -> tuple[Tensor, Prediction]:
        pred = self.forward(batch, rng)
        return bce_loss(pred.logit, batch.labels), pred

    # -- parameter snapshots ------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        problems = [f"{n}: missing" for n in own if n not in state]
        problems += [f"{n}: unexpected" for n in state if n not in own]
        problems += [f"{n}: checkpoint {tuple(state[n].shape)} vs model {own[n].shape}"
                     for n in own if n in state and tuple(state[n].shape) != own[n].shape]
        if problems:
            raise CheckpointError("checkpoint does not match model: " + "; ".join(problems))
        for n, p in own.items():
            p.data[...] = state[n]


def model_forward(model: SarcasmModel, batch: Batch, training_mode: bool = False,
                  rng: np.random.Generator | None = None) -> Prediction:
    model.train(training_mode)
    return model.forward(batch, rng)


# -- checkpoints ----------------------------------------------------------------

MANIFEST, PARAMS, MODEL_FILE, VOCAB_FILE = "manifest.json", "params.bin", "model.json", "vocab.txt"


def save_checkpoint(model: SarcasmModel, directory: str | Path, vocab: Vocabulary | None = None,
                    extra: dict | None = None) -> None:
    """Write ``manifest.json`` + ``params.bin`` (little-endian float64, manifest order).

    ``offset`` counts float64 elements from the start of ``params.bin``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").reshape(-1))
        offset += p.size
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    (directory / PARAMS).write_bytes(blob.astype("<f8").tobytes())
    meta = {"model": model.config.to_dict()}
    if extra:
        meta.update(extra)
    (directory / MODEL_FILE).write_text(json.dumps(meta, indent=1))
    if vocab is not None:
        vocab.save(directory / VOCAB_FILE)


def read_params(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
        blob = np.frombuffer((directory / PARAMS).read_bytes(), dtype="<f8")
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint: {exc.filename} not found") from None
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        if start + n > blob.size:
            raise CheckpointError(f"params.bin too short for {entry['name']}")
        state[entry["name"]] = blob[start:start + n].reshape(shape).astype(np.float64)
    return state


def load_checkpoint(directory: str | Path) -> tuple[SarcasmModel, Vocabulary | None, dict]:
    directory = Path(directory)
    try:
        meta = json.loads((directory / MODEL_FILE).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{directory / MODEL_FILE} not found") from None
    model = SarcasmModel(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(read_params(directory))
    vocab_path = directory / VOCAB_FILE
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else None
    return model, vocab, meta
