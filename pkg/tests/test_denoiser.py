"""Denoiser forward, initialization, codec, and training behavior."""

from __future__ import annotations

import math

import numpy as np
import pytest

from regenedit.dataset import gen_dataset
from regenedit.denoiser import (
    TRAINABLE_PARAMS,
    ToyDenoiser,
    decode_latent,
    denoise,
    encode_image,
    init_model,
    sinusoidal_table,
    train_toy,
)
from regenedit.errors import ParameterError, ShapeError
from regenedit.prompts import PromptEmbedding, embed_sentence
from regenedit.rng import SeededRng
from regenedit.schedule import build_schedule


def _model(t_train: int = 40, hidden: int = 32) -> ToyDenoiser:
    return init_model(t_train, SeededRng(5), hidden=hidden)


def _latent(size: int = 16, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((size, size, 1)).astype(np.float32)


def test_fresh_model_predicts_zero_noise():
    model = _model()
    out = denoise(model, _latent(), 7, embed_sentence("a disc"))
    np.testing.assert_array_equal(out.eps_pred, np.zeros_like(out.eps_pred))


def test_attention_rows_are_stochastic():
    model = _model()
    out = denoise(model, _latent(), 3, embed_sentence("a striped square"))
    attn = out.attention.matrix
    assert attn.shape == (16 * 16, 3)
    assert attn.min() >= 0.0
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-6)


def test_capture_never_perturbs_prediction():
    model = _model()
    model.params["conv_out_w"] = (
        SeededRng(9).normal((3, 3, 32, 1)) * np.float32(0.05)
    ).astype(np.float32)
    x = _latent(seed=3)
    c = embed_sentence("a solid disc")
    with_map = denoise(model, x, 11, c, capture=True)
    without = denoise(model, x, 11, c, capture=False)
    np.testing.assert_array_equal(with_map.eps_pred, without.eps_pred)
    assert without.attention is None
    assert with_map.attention.timestep == 11
    assert with_map.attention.tag == "x"


def test_sinusoidal_table_matches_closed_form():
    table = sinusoidal_table(50, 8)
    assert table.shape == (50, 8)
    for t in (0, 1, 17, 49):
        for i in range(4):
            angle = t * math.exp(-math.log(10000.0) * i / 4)
            assert table[t, i] == pytest.approx(math.sin(angle), abs=1e-6)
            assert table[t, 4 + i] == pytest.approx(math.cos(angle), abs=1e-6)


def test_forward_validates_inputs():
    model = _model()
    c = embed_sentence("a disc")
    with pytest.raises(ParameterError):
        denoise(model, _latent(), 40, c)
    with pytest.raises(ParameterError):
        denoise(model, _latent(), -1, c)
    with pytest.raises(ShapeError):
        denoise(model, np.zeros((16, 16), dtype=np.float32), 0, c)
    with pytest.raises(ShapeError):
        denoise(model, np.zeros((16, 16, 2), dtype=np.float32), 0, c)
    bad = PromptEmbedding(tokens=("a", "b"), matrix=np.zeros((2, 5), dtype=np.float32))
    with pytest.raises(ShapeError):
        denoise(model, _latent(), 0, bad)


def test_empty_prompt_is_accepted():
    model = _model()
    out = denoise(model, _latent(), 2, PromptEmbedding.empty())
    assert out.attention.matrix.shape == (256, 1)
    np.testing.assert_allclose(out.attention.matrix, 1.0)


def test_init_is_deterministic_and_scaled():
    a = init_model(30, SeededRng(4))
    b = init_model(30, SeededRng(4))
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    fan_in = 9  # conv_in over one channel
    std = float(a.params["conv_in_w"].std())
    assert std == pytest.approx(math.sqrt(2.0 / fan_in), rel=0.2)
    assert not np.any(a.params["conv_out_w"])


def test_trainable_params_exclude_position_table():
    assert "temb_table" not in TRAINABLE_PARAMS
    model = _model()
    assert set(TRAINABLE_PARAMS) | {"temb_table"} == set(model.params)


def test_training_is_deterministic():
    sched = build_schedule(40)
    data = gen_dataset(8, 16, SeededRng(2))
    pairs = [(encode_image(s.image), embed_sentence(s.caption)) for s in data]
    runs = []
    for _ in range(2):
        model = init_model(40, SeededRng(5), hidden=16)
        model, curve = train_toy(model, pairs, 60, 1e-3, SeededRng(6), sched)
        runs.append((model, curve))
    np.testing.assert_array_equal(runs[0][1], runs[1][1])
    for name in runs[0][0].params:
        np.testing.assert_array_equal(runs[0][0].params[name], runs[1][0].params[name])


def test_training_rejects_bad_arguments():
    sched = build_schedule(40)
    data = gen_dataset(4, 16, SeededRng(2))
    pairs = [(encode_image(s.image), embed_sentence(s.caption)) for s in data]
    model = init_model(40, SeededRng(5), hidden=16)
    with pytest.raises(ParameterError):
        train_toy(model, [], 10, 1e-3, SeededRng(0), sched)
    with pytest.raises(ParameterError):
        train_toy(model, pairs, 0, 1e-3, SeededRng(0), sched)
    with pytest.raises(ParameterError):
        train_toy(model, pairs, 10, 1e-3, SeededRng(0), build_schedule(50))


def test_training_reaches_working_loss():
    sched = build_schedule(300)
    data = gen_dataset(130, 32, SeededRng(0).spawn("data"))
    pairs = [(encode_image(s.image), embed_sentence(s.caption)) for s in data]
    model = init_model(300, SeededRng(0).spawn("init"))
    model, curve = train_toy(model, pairs, 5000, 1e-3, SeededRng(0).spawn("train"), sched)
    assert float(np.mean(curve[:100])) > float(np.mean(curve[-100:]))
    assert float(np.mean(curve[-100:])) < 0.5


def test_image_codec_round_trip():
    img = gen_dataset(1, 32, SeededRng(3))[0].image
    latent = encode_image(img)
    assert latent.shape == (32, 32, 1)
    assert latent.min() >= -1.0 and latent.max() <= 1.0
    np.testing.assert_allclose(decode_latent(latent), img, atol=1e-6)
    np.testing.assert_array_equal(
        decode_latent(np.full((4, 4, 1), 9.0, dtype=np.float32)), np.ones((4, 4))
    )
    with pytest.raises(ShapeError):
        encode_image(np.zeros((4, 4, 1), dtype=np.float32))
    with pytest.raises(ShapeError):
        decode_latent(np.zeros((4, 4), dtype=np.float32))
