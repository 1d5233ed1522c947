"""Finite-difference checks for every primitive and for the whole model.

Each check builds a scalar ``sum(op(inputs) * probe)`` from seeded random
inputs, runs backward once, and compares every input gradient against
central differences. The error of one entry is
``|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)``; the floor keeps
entries that are both near zero from producing meaningless ratios.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import Tensor, backward, no_grad, ops
from .coattention import affinity, attend, attention_pool
from .data import GeneratorConfig, collate, default_vocabulary, generate_synthetic
from .film import GRUCell, film_modulate
from .model import FusionHead, ModelConfig, SarcasmModel, bce_loss, classify

STEP = 1e-5
DENOM_FLOOR = 1e-3


@dataclass
class CheckResult:
    name: str
    max_error: float
    n_entries: int
    seconds: float

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of ``f()`` with respect to ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check(name: str, fn: Callable[..., Tensor], inputs: list[np.ndarray], seed: int,
          constants: tuple = ()) -> CheckResult:
    """Compare gradients of ``sum(fn(*inputs, *constants) * probe)`` for each input."""
    started = time.perf_counter()
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*leaves, *constants)
    probe = np.random.default_rng([seed, 99]).normal(size=out.shape)
    backward(ops.sum(ops.mul(out, probe)))

    def f() -> float:
        with no_grad():
            return float(np.sum(fn(*[Tensor(t.data) for t in leaves], *constants).data * probe))

    worst, count = 0.0, 0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        worst = max(worst, relative_error(analytic, numeric_gradient(f, leaf.data)))
        count += leaf.size
    return CheckResult(name, worst, count, time.perf_counter() - started)


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    """Random values with magnitude in [0.1, 1.5], clear of the relu kink."""
    return rng.uniform(0.1, 1.5, shape) * rng.choice([-1.0, 1.0], shape)


def _spread(rng: np.random.Generator, shape) -> np.ndarray:
    """Distinct values at least 0.01 apart, so max-pool argmaxes never flip."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.001, n)).reshape(shape) - n * 0.005


def primitive_checks(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    n = rng.normal
    results = [
        check("matmul", ops.matmul, [n(size=(3, 4)), n(size=(4, 2))], seed),
        check("conv2d", lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1),
              [n(size=(2, 2, 5, 5)), n(size=(3, 2, 3, 3)), n(size=3)], seed),
        check("elementwise:tanh", lambda a: ops.elementwise("tanh", a), [n(size=(3, 4))], seed),
        check("elementwise:sigmoid", lambda a: ops.elementwise("sigmoid", a), [n(size=(3, 4))], seed),
        check("elementwise:relu", lambda a: ops.elementwise("relu", a), [_away_from_zero(rng, (3, 4))], seed),
        check("elementwise:add", lambda a, b: ops.elementwise("add", a, b), [n(size=(3, 4)), n(size=4)], seed),
        check("elementwise:mul", lambda a, b: ops.elementwise("mul", a, b), [n(size=(3, 4)), n(size=(3, 4))], seed),
        check("elementwise:scale_shift", lambda f, g, b: ops.elementwise("scale_shift", f, g, b),
              [n(size=(2, 3, 4, 4)), n(size=(2, 3)), n(size=(2, 3))], seed),
        check("gelu", ops.gelu, [n(size=(3, 4))], seed),
        check("maxpool_cols", lambda c: ops.maxpool_cols(c, np.array([False, False, True, False, False])),
              [_spread(rng, (5, 3))], seed),
        check("masked_softmax", lambda x: ops.masked_softmax(x, np.array([False, True, False, False])),
              [n(size=(3, 4))], seed),
        check("layer_norm", ops.layer_norm, [n(size=(3, 8)), n(size=8), n(size=8)], seed),
        check("instance_norm", ops.instance_norm, [n(size=(2, 3, 4, 4))], seed),
        check("embedding", lambda t: ops.embedding(t, np.array([[1, 3, 3], [0, 2, 4]])), [n(size=(5, 3))], seed),
    ]
    cell = GRUCell(3, 4, np.random.default_rng([seed, 1]))

    def gru(x, h, wz, wr, wn, bz, br, bn):
        for name, t in zip(("w_z", "w_r", "w_n", "b_z", "b_r", "b_n"), (wz, wr, wn, bz, br, bn)):
            setattr(cell, name, t)
        return cell.step(x, h)

    results.append(check("gru_step", gru, [n(size=3), n(size=4), *(p.data for p in (
        cell.w_z, cell.w_r, cell.w_n, cell.b_z, cell.b_r, cell.b_n))], seed))
    results.append(check("film_modulate", film_modulate, [n(size=(3, 4, 4)), n(size=3), n(size=3)], seed))
    results.append(check("affinity", affinity, [n(size=(4, 5)), n(size=(3, 5)), n(0, 0.3, (5, 5))], seed))
    results.append(check("attention_pool", lambda c: attention_pool(c, None, np.array([False, True, False])),
                         [np.tanh(_spread(rng, (4, 3)))], seed))
    results.append(check("attend", attend, [n(size=3), n(size=(3, 5))], seed))
    head = FusionHead(6, np.random.default_rng([seed, 2]))

    def classify_fn(h, w, b):
        head.weight, head.bias = w, b
        return classify(h, head).logit

    results.append(check("classify", classify_fn, [n(size=(2, 6)), n(size=6), n(size=())], seed))
    labels = np.array([1, 0, 1, 1])
    results.append(check("bce_loss", lambda z: bce_loss(z, labels), [3 * n(size=4)], seed))
    return results


TOY_VOCAB_SIZE = 32


def toy_config(variant: str = "full") -> ModelConfig:
    return ModelConfig(vocab_size=TOY_VOCAB_SIZE, d=8, num_layers=2, num_heads=2, layer_tap=1, max_len=16,
                       gru_embed=6, gru_hidden=5, channels=4, n_blocks=4, q_film_dim=6, dropout=0.0,
                       variant=variant)


def toy_batch(seed: int, n: int = 3):
    vocab = default_vocabulary(TOY_VOCAB_SIZE)
    samples = generate_synthetic(GeneratorConfig(n_samples=n, image_size=8, text_noise_tokens=2,
                                                 vocab_size=TOY_VOCAB_SIZE, seed=seed))
    return collate(samples, vocab, max_len=16)


def toy_model(seed: int, variant: str = "full") -> SarcasmModel:
    """Toy model with every bias jittered off zero, so no relu sits exactly on its kink."""
    model = SarcasmModel(toy_config(variant), seed=seed)
    rng = np.random.default_rng([seed, 3])
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.data += rng.normal(0.0, 0.1, p.shape)
    return model


def model_check(seed: int, variant: str = "full") -> CheckResult:
    """Every parameter of the toy model against central differences of the loss."""
    started = time.perf_counter()
    model = toy_model(seed, variant)
    batch = toy_batch(seed)
    model.eval()
    backward(model.loss(batch)[0])

    def f() -> float:
        with no_grad():
            return float(model.loss(batch)[0].data)

    worst, count = 0.0, 0
    for _, p in model.named_parameters():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        worst = max(worst, relative_error(analytic, numeric_gradient(f, p.data)))
        count += p.size
    return CheckResult(f"model_forward[{variant}]", worst, count, time.perf_counter() - started)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [*primitive_checks(seed), model_check(seed)]


def format_table(results: list[CheckResult], tol: float) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'max rel err':>11}  {'entries':>7}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_error:>11.3e}  {r.n_entries:>7d}  "
                     f"{'pass' if r.passed(tol) else 'FAIL'}")
    return "\n".join(lines)
