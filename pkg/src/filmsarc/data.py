"""Planted-incongruity dataset: generation, splitting, JSONL I/O and batching.

Each sample draws a text class and an image class independently. The text
carries one sentiment word of its class, the image draws stripes (class 0)
or a filled disc (class 1), and the attribute tokens name the image class
with per-token flip noise. The label is 1 exactly when the two classes
differ, so neither modality alone says anything about it.

Text class 0 is the positive sentiment; image class 1 is the disc. A
positive text over a disc is therefore sarcastic (label 1).
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .text_encoder import RESERVED, Vocabulary

POSITIVE_WORDS = ("love", "great", "wonderful", "lovely", "amazing", "perfect", "beautiful", "fantastic")
NEGATIVE_WORDS = ("hate", "awful", "terrible", "disgusting", "horrible", "worst", "ugly", "gross")
STRIPE_WORDS = ("stripes", "lines", "bands", "striped")
DISC_WORDS = ("disc", "circle", "round", "ball")

SENTIMENT_WORDS = (POSITIVE_WORDS, NEGATIVE_WORDS)
ATTRIBUTE_WORDS = (STRIPE_WORDS, DISC_WORDS)

DEFAULT_VOCAB_SIZE = 256


def default_vocabulary(size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    named = [*RESERVED, *POSITIVE_WORDS, *NEGATIVE_WORDS, *STRIPE_WORDS, *DISC_WORDS]
    if size < len(named) + 1:
        raise ConfigError(f"vocabulary size {size} leaves no room for filler tokens")
    fillers = [f"w{i:03d}" for i in range(size - len(named))]
    return Vocabulary(named + fillers)


def filler_words(vocab: Vocabulary) -> list[str]:
    return [t for t in vocab.tokens if t.startswith("w") and t[1:].isdigit()]


@dataclass
class MultimodalSample:
    id: str
    text_tokens: list[str]
    attribute_tokens: list[str]
    image: np.ndarray  # float32 [3, H, W] in [0, 1]
    label: int
    latent: dict | None = None

    def __eq__(self, other) -> bool:
        return (isinstance(other, MultimodalSample)
                and self.id == other.id
                and self.text_tokens == other.text_tokens
                and self.attribute_tokens == other.attribute_tokens
                and self.label == other.label
                and self.latent == other.latent
                and self.image.dtype == other.image.dtype
                and self.image.shape == other.image.shape
                and self.image.tobytes() == other.image.tobytes())


@dataclass
class GeneratorConfig:
    n_samples: int = 2500
    attribute_noise: float = 0.25
    pixel_noise: float = 0.15
    text_noise_tokens: int = 2
    n_attributes: int = 5
    image_size: int = 32
    vocab_size: int = DEFAULT_VOCAB_SIZE
    contrast: tuple[float, float] = (0.3, 0.6)
    blank_rate: float = 0.2
    seed: int = 7

    def validate(self) -> None:
        if not 0.0 <= self.blank_rate <= 1.0:
            raise ConfigError(f"blank rate {self.blank_rate} outside [0, 1]")
        if not 0.0 <= self.attribute_noise <= 1.0:
            raise ConfigError(f"attribute noise {self.attribute_noise} outside [0, 1]")
        if not (self.pixel_noise >= 0.0 and math.isfinite(self.pixel_noise)):
            raise ConfigError(f"pixel noise {self.pixel_noise} must be a finite value >= 0")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if self.text_noise_tokens < 0 or self.n_attributes < 1:
            raise ConfigError("need text_noise_tokens >= 0 and n_attributes >= 1")
        lo, hi = self.contrast
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"contrast range {self.contrast} must satisfy 0 <= lo <= hi <= 1")
        if self.image_size < 8:
            raise ConfigError(f"image size {self.image_size} too small")


def render_image(image_class: int, size: int, pixel_noise: float, rng: np.random.Generator,
                 contrast: tuple[float, float] = (0.3, 0.6), blank: bool = False) -> np.ndarray:
    """Stripes (class 0) or a filled disc (class 1), plus Gaussian noise.

    The foreground sits a random contrast above a random background colour.
    A blank image draws its pattern at zero contrast, so only noise remains.
    """
    kappa = 0.0 if blank else rng.uniform(*contrast)
    bg = rng.uniform(0.0, 1.0 - kappa, 3)
    fg = bg + kappa
    yy, xx = np.mgrid[0:size, 0:size]
    if image_class == 0:
        period = int(rng.integers(4, 9))
        phase = int(rng.integers(0, period))
        mask = ((yy + phase) % period) < period / 2
    else:
        lo, hi = size * 0.3, size * 0.7
        cy, cx = rng.uniform(lo, hi, 2)
        radius = rng.uniform(size * 0.16, size * 0.28)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    if pixel_noise > 0:
        img = img + rng.normal(0.0, pixel_noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_sample(cfg: GeneratorConfig, index: int, fillers: Sequence[str]) -> MultimodalSample:
    rng = np.random.default_rng([cfg.seed, index])
    text_class = int(rng.integers(0, 2))
    image_class = int(rng.integers(0, 2))

    words = list(rng.choice(fillers, size=cfg.text_noise_tokens)) if cfg.text_noise_tokens else []
    sentiment = SENTIMENT_WORDS[text_class][int(rng.integers(0, len(SENTIMENT_WORDS[text_class])))]
    words.insert(int(rng.integers(0, len(words) + 1)), sentiment)

    attributes = []
    for _ in range(cfg.n_attributes):
        named = 1 - image_class if rng.random() < cfg.attribute_noise else image_class
        pool = ATTRIBUTE_WORDS[named]
        attributes.append(pool[int(rng.integers(0, len(pool)))])

    blank = bool(rng.random() < cfg.blank_rate)
    image = render_image(image_class, cfg.image_size, cfg.pixel_noise, rng, cfg.contrast, blank)
    return MultimodalSample(
        id=f"s{cfg.seed}-{index:06d}",
        text_tokens=[str(w) for w in words],
        attribute_tokens=attributes,
        image=image,
        label=int(text_class != image_class),
        latent={"text_class": text_class, "image_class": image_class, "blank": blank},
    )


def generate_synthetic(cfg: GeneratorConfig) -> list[MultimodalSample]:
    """Deterministic per seed; sample ``i`` depends only on ``(seed, i)``."""
    cfg.validate()
    fillers = filler_words(default_vocabulary(cfg.vocab_size))
    return [generate_sample(cfg, i, fillers) for i in range(cfg.n_samples)]


def split_dataset(samples: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous train/val/test slices.

    Validation and test sizes are rounded; train takes the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios {tuple(ratios)} must be three non-negative values summing to 1")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_train = n - n_val - n_test
    picked = [samples[i] for i in order]
    return picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]


# -- JSONL ----------------------------------------------------------------------

def sample_to_json(s: MultimodalSample) -> dict:
    raster = np.ascontiguousarray(s.image, dtype="<f4")
    obj = {
        "id": s.id,
        "text": " ".join(s.text_tokens),
        "attributes": list(s.attribute_tokens),
        "image": base64.b64encode(raster.tobytes()).decode("ascii"),
        "shape": list(raster.shape),
        "label": int(s.label),
    }
    if s.latent is not None:
        obj["latent"] = s.latent
    return obj


_REQUIRED = ("id", "text", "attributes", "image", "shape", "label")


def sample_from_json(obj: dict, line_no: int = 0) -> MultimodalSample:
    for key in _REQUIRED:
        if key not in obj:
            raise DataError(f"line {line_no}: missing key {key!r}")
    shape = tuple(int(n) for n in obj["shape"])
    try:
        raw = base64.b64decode(obj["image"], validate=True)
        image = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    except (ValueError, TypeError) as exc:
        raise DataError(f"line {line_no}: bad image payload ({exc})") from None
    label = obj["label"]
    if label not in (0, 1):
        raise DataError(f"line {line_no}: label must be 0 or 1, got {label!r}")
    return MultimodalSample(
        id=str(obj["id"]),
        text_tokens=str(obj["text"]).split(),
        attribute_tokens=[str(a) for a in obj["attributes"]],
        image=image,
        label=int(label),
        latent=obj.get("latent"),
    )


def write_jsonl(path: str | Path, samples: Iterable[MultimodalSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(s), separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[MultimodalSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"line {line_no}: expected a JSON object")
            out.append(sample_from_json(obj, line_no))
    return out


# -- batching -------------------------------------------------------------------

@dataclass
class Batch:
    """Right-padded id matrices with True-for-padding masks."""

    ids: list[str]
    text_ids: np.ndarray
    text_pad: np.ndarray
    attr_ids: np.ndarray
    attr_pad: np.ndarray
    gru_ids: np.ndarray
    gru_pad: np.ndarray
    images: np.ndarray
    labels: np.ndarray
    attribute_tokens: list[list[str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


def _pad(rows: list[list[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), pad_id, dtype=np.int64)
    mask = np.ones((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = False
    return ids, mask


def standardize_images(images: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Zero mean, unit variance per image and channel; constant channels map to 0."""
    mean = images.mean(axis=(-2, -1), keepdims=True)
    var = images.var(axis=(-2, -1), keepdims=True)
    return (images - mean) / np.sqrt(var + eps)


def collate(samples: Sequence[MultimodalSample], vocab: Vocabulary, max_len: int = 360) -> Batch:
    """Tokenise, pad and standardise images.

    Text longer than ``max_len`` (with [CLS]/[SEP]) is truncated.
    """
    if not samples:
        raise DataError("cannot collate an empty batch")
    keep = max_len - 2
    text_rows = [vocab.wrap(s.text_tokens[:keep]) for s in samples]
    attr_rows = [vocab.wrap(s.attribute_tokens[:keep]) for s in samples]
    gru_rows = [vocab.encode(s.text_tokens[:keep]) or [vocab.pad_id] for s in samples]
    text_ids, text_pad = _pad(text_rows, vocab.pad_id)
    attr_ids, attr_pad = _pad(attr_rows, vocab.pad_id)
    gru_ids, gru_pad = _pad(gru_rows, vocab.pad_id)
    return Batch(
        ids=[s.id for s in samples],
        text_ids=text_ids, text_pad=text_pad,
        attr_ids=attr_ids, attr_pad=attr_pad,
        gru_ids=gru_ids, gru_pad=gru_pad,
        images=standardize_images(np.stack([s.image for s in samples]).astype(np.float64)),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        attribute_tokens=[[*s.attribute_tokens[:keep]] for s in samples],
    )
