"""Command-line entry point: gen, train, eval, gradcheck, dump-attention.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .autograd import no_grad
from .config import load_config
from .data import GeneratorConfig, generate_synthetic, read_jsonl, split_dataset, write_jsonl, default_vocabulary
from .errors import CheckpointError, ConfigError, DataError, FilmSarcError
from .model import load_checkpoint
from .text_encoder import Vocabulary
from .train import evaluate, iter_batches, param_groups, train

log = logging.getLogger("filmsarc")

SPLITS = ("train", "val", "test")


def _vocab_for(directory: Path) -> Vocabulary:
    path = directory / "vocab.txt"
    return Vocabulary.load(path) if path.exists() else default_vocabulary()


def _read(path: Path):
    if not path.exists():
        raise DataError(f"data file {path} not found")
    return read_jsonl(path)


def cmd_gen(args) -> int:
    cfg = GeneratorConfig(n_samples=args.n, attribute_noise=args.attr_noise, pixel_noise=args.pixel_noise,
                          text_noise_tokens=args.text_noise_tokens, blank_rate=args.blank_rate, seed=args.seed)
    samples = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLITS, split_dataset(samples, seed=args.seed)):
        write_jsonl(out / f"{name}.jsonl", part)
        print(f"{name}: {len(part)} samples -> {out / f'{name}.jsonl'}")
    default_vocabulary(cfg.vocab_size).save(out / "vocab.txt")
    return 0


def _group_comment(model, cfg) -> str:
    lines = ["# learning-rate groups"]
    for group in param_groups(model, cfg):
        lines.append(f"#   {group.name} (lr {group.lr:g}): {len(group.params)} tensors")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {k: v for k, v in (("variant", args.variant), ("epochs", args.epochs), ("seed", args.seed),
                                   ("layer_tap", args.layer_tap)) if v is not None}
    if overrides:
        cfg = cfg.replace(**overrides)
    data = Path(args.data)
    train_set, val_set = _read(data / "train.jsonl"), _read(data / "val.jsonl")
    test_path = data / "test.jsonl"
    test_set = read_jsonl(test_path) if test_path.exists() else None
    vocab = _vocab_for(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record, model = train(cfg, train_set, val_set, test_set, vocab, out)
    (out / "config.txt").write_text(_group_comment(model, cfg) + cfg.dumps())
    print(f"best epoch {record.best_epoch} val f1 {record.best_val.f1:.4f}")
    if record.test is not None:
        print("test " + record.test.to_json())
        print(record.test.table())
    return 0


def _checkpoint(path: str):
    model, vocab, meta = load_checkpoint(path)
    max_len = meta.get("train_config", {}).get("max_len", model.config.max_len)
    return model, vocab or default_vocabulary(model.config.vocab_size), max_len


def cmd_eval(args) -> int:
    model, vocab, max_len = _checkpoint(args.checkpoint)
    samples = _read(Path(args.data))
    report = evaluate(model, samples, vocab, args.batch_size, max_len)
    print(report.to_json())
    print(report.table())
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed)
    print(gradcheck.format_table(results, args.tol))
    failed = [r.name for r in results if not r.passed(args.tol)]
    print(f"{len(results) - len(failed)}/{len(results)} checks below tol {args.tol:g}")
    return 0 if not failed else 1


def _round(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def dump_records(model, samples, vocab, max_len: int, batch_size: int = 250):
    """One dict per sample: alpha per attribute position, FiLM vectors, activation means."""
    model.eval()
    with no_grad():
        for batch in iter_batches(samples, vocab, batch_size, max_len):
            pred = model.forward(batch)
            means = model.visual.activation_means() if model.visual is not None else []
            for i, sid in enumerate(batch.ids):
                row = {"id": sid, "label": int(batch.labels[i]), "logit": float(pred.logit.data[i])}
                positions = [vocab.tokens[t] for t in batch.attr_ids[i]]
                row["attribute_positions"] = positions
                if pred.attention is not None:
                    row["alpha"] = _round(pred.attention.alpha.data[i])
                else:
                    row["alpha"] = None
                if pred.film is not None:
                    row["film"] = [{"gamma": _round(g.data[i]), "beta": _round(b.data[i])}
                                   for g, b in pred.film.pairs()]
                else:
                    row["film"] = None
                row["activation_means"] = [_round(m[i]) for m in means] if means else None
                yield row


def cmd_dump_attention(args) -> int:
    model, vocab, max_len = _checkpoint(args.checkpoint)
    samples = _read(Path(args.data))
    if not samples:
        raise DataError(f"{args.data} holds no samples")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in dump_records(model, samples, vocab, max_len):
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(samples)} traces -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="filmsarc", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--attr-noise", type=float, default=0.25)
    p.add_argument("--pixel-noise", type=float, default=0.15)
    p.add_argument("--text-noise-tokens", type=int, default=GeneratorConfig.text_noise_tokens)
    p.add_argument("--blank-rate", type=float, default=GeneratorConfig.blank_rate)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", help="full, no-film, no-coatt, no-cls, text-only or image-only")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--layer-tap", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a JSONL file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=250)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-attention", help="write per-sample attention and FiLM traces")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FilmSarcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
