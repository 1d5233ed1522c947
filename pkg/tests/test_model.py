import json
import math

import numpy as np
import pytest

from filmsarc.autograd import Tensor, backward, ops
from filmsarc.errors import CheckpointError, ConfigError, ContractError, DimensionError
from filmsarc.gradcheck import model_check, toy_batch, toy_config, toy_model
from filmsarc.model import (FusionHead, ModelConfig, SarcasmModel, Variant, bce_loss, classify, fuse_concat,
                            load_checkpoint, model_forward, read_params, save_checkpoint)


def test_variant_parsing():
    assert Variant.parse("no-coatt") is Variant.NO_COATTENTION
    assert Variant.parse("No_FiLM") is Variant.NO_FILM
    with pytest.raises(ConfigError):
        Variant.parse("w/o everything")


def test_fuse_full_and_no_cls_lengths():
    d = 64
    q_film, cls, q_att = np.ones(1024), np.ones(d), np.ones(d)
    assert fuse_concat(q_film, cls, q_att, "full").shape == (1024 + 2 * d,)
    assert fuse_concat(q_film, None, q_att, "no_cls").shape == (1024 + d,)


def test_fuse_order_and_zero_case():
    h = fuse_concat(np.array([1.0]), np.array([2.0]), np.array([3.0]), Variant.FULL)
    assert h.data.tolist() == [1.0, 2.0, 3.0]
    assert not fuse_concat(np.zeros(4), np.zeros(2), np.zeros(2)).data.any()


def test_fuse_missing_component():
    with pytest.raises(ContractError):
        fuse_concat(np.ones(4), None, np.ones(2), "full")


@pytest.mark.parametrize("variant,drop", [("no_film", 1024), ("no_coattention", 64), ("no_cls", 64)])
def test_fusion_dim_accounting(variant, drop):
    full = ModelConfig().fusion_dim()
    assert full == 1024 + 128
    assert full - ModelConfig(variant=variant).fusion_dim() == drop


def test_classify_zero_and_saturated():
    head = FusionHead(5, np.random.default_rng(0))
    head.weight.data[...] = 0
    assert classify(np.ones(5), head).y_hat == 0.5
    head.bias.data[...] = 20.0
    assert abs(classify(np.ones(5), head).y_hat - 1.0) < 1e-8
    with pytest.raises(DimensionError):
        classify(np.ones(4), head)


def test_label_threshold_ties_to_zero():
    head = FusionHead(2, np.random.default_rng(0))
    head.weight.data[...] = [1.0, -1.0]
    pred = classify(np.array([[1.0, 1.0], [1.0, 0.5], [0.5, 1.0]]), head)
    assert pred.labels.tolist() == [0, 1, 0]
    assert np.array_equal(pred.y_hat, ops._sigmoid(pred.logit.data))


def test_bce_closed_forms():
    assert abs(bce_loss(0.0, 1).item() - math.log(2)) < 1e-12
    assert abs(bce_loss(0.0, 1).item() - 0.693147) < 1e-6
    assert bce_loss(50.0, 1).item() < 1e-20
    assert np.isfinite(bce_loss(-800.0, 1).item())


def test_bce_gradient_is_sigmoid_minus_label():
    for y in (0, 1):
        z = Tensor(np.array(0.7), requires_grad=True)
        backward(bce_loss(z, y))
        assert abs(z.grad - (ops._sigmoid(np.array(0.7)) - y)) < 1e-12
        numeric = (bce_loss(0.7 + 1e-6, y).item() - bce_loss(0.7 - 1e-6, y).item()) / 2e-6
        assert abs(z.grad - numeric) < 1e-7


def test_bce_positive_and_decreasing_for_positive_label():
    values = [bce_loss(z, 1).item() for z in np.linspace(-5, 5, 21)]
    assert all(v > 0 for v in values)
    assert all(a > b for a, b in zip(values, values[1:]))


def test_no_film_builds_no_visual_path():
    model = SarcasmModel(toy_config("no_film"), seed=0)
    assert model.visual is None and model.film is None
    names = [n for n, _ in model.named_parameters()]
    assert not any(n.startswith(("visual", "film")) for n in names)
    assert model.head.fusion_dim == 16


def test_eval_forward_is_bitwise_deterministic():
    model, batch = toy_model(1), toy_batch(1)
    a = model_forward(model, batch, training_mode=False).logit.data
    b = model_forward(model, batch, training_mode=False).logit.data
    assert np.array_equal(a, b)


def test_training_mode_uses_dropout():
    model, batch = toy_model(1), toy_batch(1)
    cfg = model.config
    cfg.dropout = 0.5
    a = model_forward(model, batch, True, np.random.default_rng(0)).logit.data
    b = model_forward(model, batch, False).logit.data
    assert not np.array_equal(a, b)


def test_prediction_carries_attention_and_film():
    model, batch = toy_model(2), toy_batch(2)
    pred = model_forward(model, batch)
    assert pred.attention.alpha.shape == batch.attr_ids.shape
    assert len(pred.film) == 4


@pytest.mark.parametrize("variant", ["full", "no_film", "no_coattention", "no_cls"])
def test_end_to_end_gradients_every_parameter(variant):
    assert model_check(3, variant).max_error < 1e-4


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = toy_model(4)
    save_checkpoint(model, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    sizes = [int(np.prod(e["shape"])) for e in manifest]
    assert [e["offset"] for e in manifest] == list(np.cumsum([0] + sizes[:-1]))
    assert (tmp_path / "params.bin").stat().st_size == 8 * sum(sizes)
    loaded, _, _ = load_checkpoint(tmp_path)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    batch = toy_batch(4)
    assert np.array_equal(model_forward(model, batch).logit.data, model_forward(loaded, batch).logit.data)


def test_checkpoint_mismatch_lists_shapes(tmp_path):
    save_checkpoint(toy_model(4), tmp_path)
    other = SarcasmModel(ModelConfig(**{**toy_config().to_dict(), "d": 12, "num_heads": 2}), seed=0)
    with pytest.raises(CheckpointError, match=r"\(32, 8\) vs model \(32, 12\)"):
        other.load_state_dict(read_params(tmp_path))


def test_checkpoint_missing_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path)
