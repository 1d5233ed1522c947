"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, Variant


@dataclass
class TrainConfig:
    # learning-rate groups
    film_lr: float = 3e-4
    encoder_lr: float = 1e-6
    coattention_lr: float = 1e-4
    batch_size: int = 32
    weight_decay: float = 1e-2
    clip_norm: float = 1.0
    max_len: int = 360
    dropout: float = 0.1
    epochs: int = 15
    seed: int = 7
    variant: str = "full"
    eval_batch_size: int = 250
    # model dimensions
    d: int = 64
    num_layers: int = 2
    num_heads: int = 4
    layer_tap: int = 1
    q_film_dim: int = 1024
    channels: int = 32
    n_blocks: int = 4
    gru_embed: int = 100
    gru_hidden: int = 64

    def validate(self) -> "TrainConfig":
        for name in ("film_lr", "encoder_lr", "coattention_lr", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.max_len < 3:
            raise ConfigError("max_len must leave room for [CLS] and [SEP]")
        if not 1 <= self.layer_tap <= self.num_layers:
            raise ConfigError(f"layer_tap {self.layer_tap} outside 1..{self.num_layers}")
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} not divisible by num_heads={self.num_heads}")
        Variant.parse(self.variant)
        return self

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d=self.d, num_layers=self.num_layers, num_heads=self.num_heads,
            layer_tap=self.layer_tap, max_len=self.max_len, gru_embed=self.gru_embed,
            gru_hidden=self.gru_hidden, channels=self.channels, n_blocks=self.n_blocks,
            q_film_dim=self.q_film_dim, dropout=self.dropout,
            variant=Variant.parse(self.variant).value)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **changes}).validate()


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = (base or TrainConfig()).to_dict()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind in ("int", int):
                values[key] = int(value)
            elif kind in ("float", float):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"config line {line_no}: bad value {value!r} for {key}") from None
    return TrainConfig(**values).validate()


def load_config(path: str | Path | None) -> TrainConfig:
    if path is None:
        return TrainConfig().validate()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
