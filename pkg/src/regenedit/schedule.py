"""Noise schedule construction and deterministic DDIM stepping.

A schedule is a linear beta ramp over `t_train` steps with cumulative
products `alpha_bars`.  Denoise/invert steps are the eta=0 deterministic
update; both share the same predicted-clean-sample form, so a single step
with frozen noise is exactly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

Array = np.ndarray


@dataclass(frozen=True)
class NoiseSchedule:
    t_train: int
    betas: Array        # (t_train,) in (0,1)
    alphas: Array       # 1 - betas
    alpha_bars: Array   # cumulative products, strictly decreasing

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.t_train:
            raise ParameterError(
                f"step {t} outside schedule [0, {self.t_train})"
            )
        return t


@dataclass(frozen=True)
class StepSequence:
    """Strictly increasing training-step indices used for DDIM."""

    indices: tuple

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> int:
        return self.indices[i]


def build_schedule(
    t_train: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linear beta ramp; alpha_bars are float64 running products."""
    if t_train < 1:
        raise ParameterError(f"t_train must be >= 1, got {t_train}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        t_train=int(t_train),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
    )


def _check_dims(a: Array, b: Array, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def q_sample(x0: Array, t: int, eps: Array, sched: NoiseSchedule) -> Array:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    t = sched.check_step(t)
    _check_dims(x0, eps, "q_sample")
    ab = sched.alpha_bars[t]
    out = np.sqrt(ab) * x0.astype(np.float64) + np.sqrt(1.0 - ab) * eps.astype(
        np.float64
    )
    return out.astype(np.float32)


def predict_x0(
    xt: Array, t: int, eps_pred: Array, sched: NoiseSchedule
) -> Array:
    """Predicted clean sample: (xt - sqrt(1 - ab_t) * eps) / sqrt(ab_t)."""
    t = sched.check_step(t)
    _check_dims(xt, eps_pred, "predict_x0")
    ab = sched.alpha_bars[t]
    out = (xt.astype(np.float64) - np.sqrt(1.0 - ab) * eps_pred.astype(np.float64)) / np.sqrt(ab)
    return out.astype(np.float32)


def ddim_denoise_step(
    xt: Array, t_from: int, t_to: int, eps_pred: Array, sched: NoiseSchedule
) -> Array:
    """One deterministic denoise step t_from -> t_to (t_to < t_from)."""
    t_from = sched.check_step(t_from)
    t_to = sched.check_step(t_to)
    if t_to >= t_from:
        raise ParameterError(
            f"denoise step needs t_to < t_from, got {t_to} >= {t_from}"
        )
    x0_hat = predict_x0(xt, t_from, eps_pred, sched)
    ab_to = sched.alpha_bars[t_to]
    out = np.sqrt(ab_to) * x0_hat.astype(np.float64) + np.sqrt(
        1.0 - ab_to
    ) * eps_pred.astype(np.float64)
    return out.astype(np.float32)


def ddim_invert_step(
    x_prev: Array,
    t_prev: int,
    t_next: int,
    eps_pred: Array,
    sched: NoiseSchedule,
) -> Array:
    """One deterministic inversion step t_prev -> t_next (t_next > t_prev)."""
    t_prev = sched.check_step(t_prev)
    t_next = sched.check_step(t_next)
    if t_next <= t_prev:
        raise ParameterError(
            f"invert step needs t_next > t_prev, got {t_next} <= {t_prev}"
        )
    x0_hat = predict_x0(x_prev, t_prev, eps_pred, sched)
    ab_next = sched.alpha_bars[t_next]
    out = np.sqrt(ab_next) * x0_hat.astype(np.float64) + np.sqrt(
        1.0 - ab_next
    ) * eps_pred.astype(np.float64)
    return out.astype(np.float32)


def make_step_sequence(sched: NoiseSchedule, n_steps: int) -> StepSequence:
    """Uniformly strided subsequence of [0, t_train), starting at 0."""
    if not 1 <= n_steps <= sched.t_train:
        raise ParameterError(
            f"n_steps must be in [1, {sched.t_train}], got {n_steps}"
        )
    stride = sched.t_train // n_steps
    return StepSequence(indices=tuple(i * stride for i in range(n_steps)))
