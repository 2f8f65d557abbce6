"""Autocorrelation regularization of predicted noise.

During inversion the predicted noise drifts away from white Gaussian; this
module scores that drift (pairwise circular-shift correlations over an
average-pooled pyramid plus a moment-matched KL term) and refines a noise
map by gradient descent on the combined loss.

All losses exist in one implementation, written against the autodiff tape;
the plain-array entry points wrap their input as a constant graph leaf, so
the scored value and the differentiated value can never disagree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ParameterError, ShapeError

Array = np.ndarray

MIN_PYRAMID_SIZE = 8
VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class NoisePyramid:
    """Average-pooled noise maps, level 0 unmodified, sizes halving to 8."""

    levels: List[Array]


@dataclass(frozen=True)
class NoiseRegConfig:
    """Inner refinement applied to each predicted noise during inversion."""

    k_iters: int = 5
    step_size: float = 1e-4
    lam: float = 1.0


def _check_square_map(eps: Array) -> Array:
    eps = np.asarray(eps)
    if eps.ndim != 3 or eps.shape[0] != eps.shape[1]:
        raise ShapeError(f"expected S x S x C noise map, got shape {eps.shape}")
    s = eps.shape[0]
    if s & (s - 1):
        raise ParameterError(f"map size must be a power of two, got {s}")
    return eps.astype(np.float32, copy=False)


def _pyramid_vars(eps: Var) -> List[Var]:
    levels = [eps]
    while levels[-1].shape[0] > MIN_PYRAMID_SIZE:
        levels.append(ad.avg_pool2_v(levels[-1]))
    return levels


def build_pyramid(eps: Array) -> NoisePyramid:
    """Repeated 2x2 average pooling until min(S, 8)."""
    eps = _check_square_map(eps)
    levels = _pyramid_vars(ad.constant(eps))
    return NoisePyramid(levels=[lv.value for lv in levels])


def _pair_loss_var(levels: List[Var]) -> Var:
    total = None
    for lv in levels:
        s = lv.shape[0]
        acc = None
        for delta in range(1, s):
            shifted = ad.add(ad.roll(lv, delta, 0), ad.roll(lv, delta, 1))
            term = ad.sum_all(ad.mul(lv, shifted))
            acc = term if acc is None else ad.add(acc, term)
        level_loss = ad.mul(acc, 1.0 / float(s * s))
        total = level_loss if total is None else ad.add(total, level_loss)
    return total


def _kl_loss_var(eps: Var) -> Var:
    c = eps.shape[-1]
    flat = ad.reshape(eps, (-1, c))
    mu = ad.mean_axis(flat, 0)                      # (1, C)
    var = ad.mean_axis(ad.square(ad.sub(flat, mu)), 0)
    var_c = ad.clamp_min(var, VARIANCE_FLOOR)
    per_channel = ad.sub(
        ad.add(var_c, ad.square(mu)), ad.add(ad.log(var_c), 1.0)
    )
    return ad.mul(ad.sum_all(per_channel), 0.5)


def auto_loss_var(eps: Var, lam: float) -> Var:
    pair = _pair_loss_var(_pyramid_vars(eps))
    if lam == 0.0:
        return pair
    return ad.add(pair, ad.mul(_kl_loss_var(eps), float(lam)))


def pair_loss(pyr: NoisePyramid) -> float:
    """Circular pairwise correlation over all offsets, summed over levels."""
    levels = [ad.constant(np.asarray(lv, dtype=np.float32)) for lv in pyr.levels]
    return float(_pair_loss_var(levels).value)


def kl_loss(eps: Array) -> float:
    """KL of the moment-matched per-channel Gaussian against N(0, 1)."""
    eps = np.asarray(eps, dtype=np.float32)
    if eps.size == 0:
        raise ParameterError("kl_loss needs a non-empty map")
    if eps.ndim == 2:
        eps = eps[:, :, None]
    return float(_kl_loss_var(ad.constant(eps)).value)


def auto_loss(eps: Array, lam: float = 1.0) -> float:
    """pair_loss over the pyramid plus lam * kl_loss."""
    if lam < 0.0:
        raise ParameterError(f"lam must be >= 0, got {lam}")
    eps = _check_square_map(eps)
    return float(auto_loss_var(ad.constant(eps), lam).value)


def regularize_noise(
    eps_pred: Array,
    k_iters: int,
    step_size: float,
    lam: float = 1.0,
) -> Array:
    """Refine a predicted noise map by gradient descent on the combined loss.

    k_iters = 0 returns the input unchanged.
    """
    if k_iters < 0:
        raise ParameterError(f"k_iters must be >= 0, got {k_iters}")
    eps = _check_square_map(eps_pred).copy()
    for _ in range(int(k_iters)):
        grad = ad.gradient(lambda v: auto_loss_var(v, lam), eps)
        eps = (eps - np.float32(step_size) * grad).astype(np.float32)
    return eps
