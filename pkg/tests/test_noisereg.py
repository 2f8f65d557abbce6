"""Noise refinement against loop oracles and closed forms."""

from __future__ import annotations

import numpy as np
import pytest

from regenedit.errors import ParameterError, ShapeError
from regenedit.metrics import lag1_autocorr
from regenedit.noisereg import (
    NoiseRegConfig,
    auto_loss,
    build_pyramid,
    kl_loss,
    pair_loss,
    regularize_noise,
)
from regenedit.rng import SeededRng


def _pool_oracle(level: np.ndarray) -> np.ndarray:
    s, _, c = level.shape
    return level.reshape(s // 2, 2, s // 2, 2, c).mean(axis=(1, 3))


def _pyramid_oracle(eps: np.ndarray) -> list:
    levels = [eps.astype(np.float64)]
    while levels[-1].shape[0] > 8:
        levels.append(_pool_oracle(levels[-1]))
    return levels


def _pair_loss_oracle(eps: np.ndarray) -> float:
    """Explicit loops over levels, offsets, positions, and channels."""
    total = 0.0
    for level in _pyramid_oracle(eps):
        s, _, c = level.shape
        acc = 0.0
        for delta in range(1, s):
            for y in range(s):
                for x in range(s):
                    for ch in range(c):
                        acc += level[y, x, ch] * (
                            level[(y + delta) % s, x, ch]
                            + level[y, (x + delta) % s, ch]
                        )
        total += acc / float(s * s)
    return total


def _kl_oracle(eps: np.ndarray) -> float:
    flat = eps.reshape(-1, eps.shape[-1]).astype(np.float64)
    mu = flat.mean(axis=0)
    var = np.maximum(((flat - mu) ** 2).mean(axis=0), 1e-8)
    return float(0.5 * np.sum(var + mu**2 - 1.0 - np.log(var)))


def test_pyramid_shapes_halve_to_eight():
    eps = SeededRng(0).normal((32, 32, 1))
    pyr = build_pyramid(eps)
    assert [lv.shape for lv in pyr.levels] == [(32, 32, 1), (16, 16, 1), (8, 8, 1)]
    np.testing.assert_array_equal(pyr.levels[0], eps)
    for lo, hi in zip(pyr.levels[1:], pyr.levels[:-1]):
        np.testing.assert_allclose(lo, _pool_oracle(hi), rtol=1e-5, atol=1e-6)


def test_pyramid_stops_at_min_size():
    eps = SeededRng(1).normal((8, 8, 2))
    pyr = build_pyramid(eps)
    assert [lv.shape for lv in pyr.levels] == [(8, 8, 2)]


def test_pyramid_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        build_pyramid(SeededRng(2).normal((8, 4, 1)))
    with pytest.raises(ShapeError):
        build_pyramid(SeededRng(2).normal((8, 8)))
    with pytest.raises(ParameterError):
        build_pyramid(SeededRng(2).normal((12, 12, 1)))


def test_pair_loss_matches_loop_oracle():
    rng = SeededRng(3)
    for trial in range(8):
        size = (8, 16)[trial % 2]
        eps = rng.normal((size, size, 1))
        got = pair_loss(build_pyramid(eps))
        assert got == pytest.approx(_pair_loss_oracle(eps), abs=1e-4)


def test_pair_loss_constant_map_closed_form():
    for v in (0.7, -1.3):
        eps8 = np.full((8, 8, 1), v, dtype=np.float32)
        assert pair_loss(build_pyramid(eps8)) == pytest.approx(
            2.0 * 7 * v * v, rel=1e-5
        )
        eps16 = np.full((16, 16, 1), v, dtype=np.float32)
        assert pair_loss(build_pyramid(eps16)) == pytest.approx(
            2.0 * (15 + 7) * v * v, rel=1e-5
        )


def test_kl_loss_matches_moment_oracle():
    rng = SeededRng(4)
    for trial in range(8):
        eps = (rng.normal((16, 16, 2)) * np.float32(0.5 + trial * 0.3)).astype(
            np.float32
        )
        assert kl_loss(eps) == pytest.approx(_kl_oracle(eps), rel=1e-4, abs=1e-5)


def test_kl_loss_zero_map_uses_variance_floor():
    eps = np.zeros((8, 8, 1), dtype=np.float32)
    assert kl_loss(eps) == pytest.approx(0.5 * (1e-8 - 1.0 - np.log(1e-8)), rel=1e-4)


def test_kl_loss_near_zero_for_standardized_noise():
    eps = SeededRng(5).normal((32, 32, 1)).astype(np.float64)
    eps = ((eps - eps.mean()) / eps.std()).astype(np.float32)
    assert kl_loss(eps) < 1e-4


def test_auto_loss_assembles_terms():
    eps = SeededRng(6).normal((16, 16, 1))
    p = pair_loss(build_pyramid(eps))
    k = kl_loss(eps)
    assert auto_loss(eps, 0.0) == pytest.approx(p, rel=1e-6)
    assert auto_loss(eps, 1.0) == pytest.approx(p + k, abs=1e-5)
    assert auto_loss(eps, 10.0) == pytest.approx(p + 10.0 * k, abs=1e-4)
    with pytest.raises(ParameterError):
        auto_loss(eps, -0.5)


def test_regularize_noise_zero_iterations_is_identity():
    eps = SeededRng(7).normal((16, 16, 1))
    out = regularize_noise(eps, 0, 1e-4)
    np.testing.assert_array_equal(out, eps)
    with pytest.raises(ParameterError):
        regularize_noise(eps, -1, 1e-4)


def test_regularize_noise_descends_on_smoothed_noise():
    """Box-smoothed noise has strong positive correlation; each refinement
    configuration must strictly lower both the loss and the lag-1 metric."""
    rng = SeededRng(8)
    for trial in range(10):
        raw = rng.normal((16, 16, 1)).astype(np.float64)
        sm = sum(
            np.roll(np.roll(raw, dy, 0), dx, 1)
            for dy in range(-2, 3)
            for dx in range(-2, 3)
        ) / 25.0
        eps = (sm / sm.std()).astype(np.float32)
        out = regularize_noise(eps, 5, 1e-4, 1.0)
        assert auto_loss(out, 1.0) < auto_loss(eps, 1.0)
        assert lag1_autocorr(out) < lag1_autocorr(eps)
        assert out.dtype == np.float32 and out.shape == eps.shape


def test_noise_reg_config_defaults():
    cfg = NoiseRegConfig()
    assert cfg.k_iters == 5
    assert cfg.step_size == pytest.approx(1e-4)
    assert cfg.lam == pytest.approx(1.0)
