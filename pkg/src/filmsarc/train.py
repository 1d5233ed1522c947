"""Training loop, evaluation and run records."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Adam, ParamGroup, backward, no_grad
from .config import TrainConfig
from .data import MultimodalSample, collate
from .errors import DataError, NumericalError
from .metrics import MetricsReport, compute_metrics
from .model import SarcasmModel, save_checkpoint
from .text_encoder import Vocabulary

log = logging.getLogger(__name__)

GROUP_FILM, GROUP_ENCODER, GROUP_COATTENTION = "film", "encoder", "coattention"


def build_model(cfg: TrainConfig, vocab: Vocabulary) -> SarcasmModel:
    return SarcasmModel(cfg.model_config(len(vocab)), seed=cfg.seed)


def param_groups(model: SarcasmModel, cfg: TrainConfig) -> list[ParamGroup]:
    """FiLM generator + visual path, encoder, and co-attention + fusion head."""
    film = [*(model.film.parameters() if model.film else []),
            *(model.visual.parameters() if model.visual else [])]
    encoder = model.encoder.parameters() if model.encoder else []
    coatt = [*(model.coattention.parameters() if model.coattention else []),
             *model.head.parameters()]
    wd = cfg.weight_decay
    return [ParamGroup(GROUP_FILM, film, cfg.film_lr, wd),
            ParamGroup(GROUP_ENCODER, encoder, cfg.encoder_lr, wd),
            ParamGroup(GROUP_COATTENTION, coatt, cfg.coattention_lr, wd)]


def iter_batches(samples: Sequence[MultimodalSample], vocab: Vocabulary, batch_size: int,
                 max_len: int, order: np.ndarray | None = None):
    idx = np.arange(len(samples)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield collate([samples[i] for i in idx[start:start + batch_size]], vocab, max_len)


def predict(model: SarcasmModel, samples: Sequence[MultimodalSample], vocab: Vocabulary,
            batch_size: int = 250, max_len: int = 360) -> np.ndarray:
    """Eval-mode logits in input order."""
    if not samples:
        raise DataError("no samples to evaluate")
    model.eval()
    out = []
    with no_grad():
        for batch in iter_batches(samples, vocab, batch_size, max_len):
            out.append(model.forward(batch).logit.data)
    return np.concatenate(out)


def evaluate(model: SarcasmModel, samples: Sequence[MultimodalSample], vocab: Vocabulary,
             batch_size: int = 250, max_len: int = 360) -> MetricsReport:
    logits = predict(model, samples, vocab, batch_size, max_len)
    return compute_metrics((logits > 0).astype(np.int64), [s.label for s in samples])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: MetricsReport
    wall_time: float
    clip_norms: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val"] = self.val.to_dict()
        return d


@dataclass
class RunRecord:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    test: MetricsReport | None = None

    @property
    def best_val(self) -> MetricsReport:
        return self.epochs[self.best_epoch].val

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [e.to_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val": self.best_val.to_dict() if self.epochs else None,
            "test": self.test.to_dict() if self.test else None,
        }

    def metrics_fingerprint(self) -> list:
        """Everything metric-valued, for bitwise run comparisons (no wall times)."""
        return [[e.train_loss, e.val.to_dict(), e.clip_norms] for e in self.epochs] + [
            self.best_epoch, self.test.to_dict() if self.test else None]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def train(cfg: TrainConfig, train_set: Sequence[MultimodalSample], val_set: Sequence[MultimodalSample],
          test_set: Sequence[MultimodalSample] | None, vocab: Vocabulary,
          out_dir: str | Path | None = None) -> tuple[RunRecord, SarcasmModel]:
    """Train for ``cfg.epochs``, keep the best-validation-F1 epoch, score it on test."""
    cfg.validate()
    if not train_set or not val_set:
        raise DataError("training needs non-empty train and validation splits")
    model = build_model(cfg, vocab)
    opt = Adam(param_groups(model, cfg))
    record = RunRecord(config=cfg.to_dict())
    best_state, best_f1 = None, -1.0

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        losses, norms = [], []
        for i, batch in enumerate(iter_batches(train_set, vocab, cfg.batch_size, cfg.max_len, order)):
            model.train()
            rng = np.random.default_rng([cfg.seed, epoch, i])
            loss, _ = model.loss(batch, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at epoch {epoch} batch {i} (batch seed {[cfg.seed, epoch, i]})")
            opt.zero_grad()
            backward(loss)
            norms.append(opt.clip(cfg.clip_norm))
            opt.step()
            losses.append(value * len(batch))
        val = evaluate(model, val_set, vocab, cfg.eval_batch_size, cfg.max_len)
        rec = EpochRecord(epoch, float(np.sum(losses) / len(train_set)), val,
                          time.perf_counter() - started, norms)
        record.epochs.append(rec)
        if val.f1 > best_f1:
            best_f1, best_state = val.f1, model.state_dict()
            record.best_epoch = epoch
        log.info("epoch %d loss %.4f val f1 %.4f acc %.4f (%.1fs)", epoch, rec.train_loss,
                 val.f1, val.accuracy, rec.wall_time)

    model.load_state_dict(best_state)
    if test_set:
        record.test = evaluate(model, test_set, vocab, cfg.eval_batch_size, cfg.max_len)
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(model, out_dir / "checkpoint", vocab, extra={"train_config": cfg.to_dict()})
        record.save(out_dir / "run_record.json")
    return record, model


