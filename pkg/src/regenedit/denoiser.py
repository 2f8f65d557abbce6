"""Toy conditional noise predictor with one cross-attention block.

Architecture (size-generic over S and C, defaults 32x32x1):
conv3x3(C -> hidden) -> add projected sinusoidal timestep embedding ->
channel layer norm with learnable gain/shift -> single-head cross-attention
against the prompt matrix (queries from spatial features, keys/values from
token rows, scaled by 1/sqrt(d)) with residual add and silu ->
conv3x3(hidden -> C), zero-initialized so an untrained model predicts
zero noise.

The silu after the residual matters: prompt edits shift every token row by
the same vector, which moves all attention logits of a row in lockstep
(softmax unchanged) and adds one constant vector to the attention output.
A purely linear tail would turn that into a uniform brightness offset; the
gate lets the shift interact with local features so edits can move
geometry, not just levels.

The forward pass is written against the autodiff tape; inference runs the
same code with untracked leaves.  The attention matrix is part of every
forward and capturing it never perturbs the noise prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ParameterError, ShapeError
from .prompts import EMBED_DIM, PromptEmbedding
from .rng import SeededRng
from .schedule import NoiseSchedule, q_sample

Array = np.ndarray

HIDDEN_DEFAULT = 32
NORM_EPS = 1e-5
EMPTY_PROMPT_FRACTION = 0.1

# Everything except the fixed sinusoidal table.
TRAINABLE_PARAMS = (
    "conv_in_w", "conv_in_b", "temb_w", "temb_b",
    "norm_gamma", "norm_beta", "wq", "wk", "wv", "wo",
    "conv_out_w", "conv_out_b",
)


@dataclass(frozen=True)
class CrossAttentionMap:
    """Row-stochastic (spatial x token) attention captured at one timestep."""

    matrix: Array          # (S*S, L), rows sum to 1
    timestep: int
    tag: str               # x | yp | y | edit | rev | ref


@dataclass
class DenoiserOutput:
    eps_pred: Array
    attention: Optional[CrossAttentionMap]


@dataclass
class ToyDenoiser:
    t_train: int
    channels: int = 1
    hidden: int = HIDDEN_DEFAULT
    context_dim: int = EMBED_DIM
    params: Dict[str, Array] = field(default_factory=dict)

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.t_train:
            raise ParameterError(f"step {t} outside [0, {self.t_train})")
        return t


def sinusoidal_table(t_train: int, dim: int) -> Array:
    """Standard sin/cos position table over integer steps."""
    half = dim // 2
    freqs = np.exp(
        -math.log(10000.0) * np.arange(half, dtype=np.float64) / half
    )
    angles = np.arange(t_train, dtype=np.float64)[:, None] * freqs[None, :]
    table = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    return table.astype(np.float32)


def init_model(
    t_train: int,
    rng: SeededRng,
    channels: int = 1,
    hidden: int = HIDDEN_DEFAULT,
    context_dim: int = EMBED_DIM,
) -> ToyDenoiser:
    """Scaled-normal weights; output conv zero-initialized."""

    def w(shape, fan_in):
        return (rng.normal(shape) * np.float32(math.sqrt(2.0 / fan_in))).astype(
            np.float32
        )

    params: Dict[str, Array] = {
        "conv_in_w": w((3, 3, channels, hidden), 9 * channels),
        "conv_in_b": np.zeros(hidden, dtype=np.float32),
        "temb_table": sinusoidal_table(t_train, hidden),
        "temb_w": w((hidden, hidden), hidden),
        "temb_b": np.zeros(hidden, dtype=np.float32),
        "norm_gamma": np.ones(hidden, dtype=np.float32),
        "norm_beta": np.zeros(hidden, dtype=np.float32),
        "wq": w((hidden, context_dim), hidden),
        "wk": w((context_dim, context_dim), context_dim),
        "wv": w((context_dim, context_dim), context_dim),
        "wo": w((context_dim, hidden), context_dim),
        "conv_out_w": np.zeros((3, 3, hidden, channels), dtype=np.float32),
        "conv_out_b": np.zeros(channels, dtype=np.float32),
    }
    return ToyDenoiser(
        t_train=int(t_train),
        channels=int(channels),
        hidden=int(hidden),
        context_dim=int(context_dim),
        params=params,
    )


def _check_latent(model: ToyDenoiser, xt: Array) -> Array:
    xt = np.asarray(xt)
    if xt.ndim != 3 or xt.shape[2] != model.channels:
        raise ShapeError(
            f"latent must be S x S x {model.channels}, got shape {xt.shape}"
        )
    return xt.astype(np.float32, copy=False)


def forward_graph(
    model: ToyDenoiser,
    xt: Optional[Array],
    t: int,
    c: PromptEmbedding,
    track_input: bool = False,
    param_vars: Optional[Dict[str, Var]] = None,
    x_var: Optional[Var] = None,
) -> Tuple[Var, Var, Var]:
    """Build the forward graph; returns (eps, attention, input leaf).

    Passing `x_var` reuses an existing graph leaf (any float dtype) instead
    of wrapping `xt`; gradient checking runs the model this way.
    """
    t = model.check_step(t)
    if x_var is None:
        xt = _check_latent(model, xt)
        x_var = ad.tracked(xt) if track_input else ad.constant(xt)
    else:
        if x_var.value.ndim != 3 or x_var.value.shape[2] != model.channels:
            raise ShapeError(
                f"latent must be S x S x {model.channels}, got shape "
                f"{x_var.value.shape}"
            )
        xt = x_var.value
    if len(c) < 1:
        raise ParameterError("prompt must have at least one token row")
    if c.matrix.shape[1] != model.context_dim:
        raise ShapeError(
            f"prompt dim {c.matrix.shape[1]} != model context dim "
            f"{model.context_dim}"
        )

    if param_vars is None:
        param_vars = {k: ad.constant(v) for k, v in model.params.items()}
    p = param_vars
    s = xt.shape[0]
    n = s * s

    h = ad.conv3x3(x_var, p["conv_in_w"], p["conv_in_b"])
    trow = ad.constant(model.params["temb_table"][t][None, :])
    temb = ad.silu(ad.add(ad.matmul(trow, p["temb_w"]), p["temb_b"]))
    h = ad.add(h, temb)

    mean = ad.mean_axis(h, 2)
    centered = ad.sub(h, mean)
    var = ad.mean_axis(ad.square(centered), 2)
    normed = ad.div(centered, ad.sqrt(ad.add(var, NORM_EPS)))
    h = ad.add(ad.mul(normed, p["norm_gamma"]), p["norm_beta"])

    flat = ad.reshape(h, (n, model.hidden))
    q = ad.matmul(flat, p["wq"])
    k = ad.matmul(ad.constant(c.matrix), p["wk"])
    v = ad.matmul(ad.constant(c.matrix), p["wv"])
    scores = ad.mul(
        ad.matmul(q, ad.transpose2d(k)), 1.0 / math.sqrt(model.context_dim)
    )
    attn = ad.softmax_rows_v(scores)
    mixed = ad.matmul(ad.matmul(attn, v), p["wo"])
    h = ad.silu(ad.add(h, ad.reshape(mixed, (s, s, model.hidden))))

    eps = ad.conv3x3(h, p["conv_out_w"], p["conv_out_b"])
    return eps, attn, x_var


def denoise(
    model: ToyDenoiser,
    xt: Array,
    t: int,
    c: PromptEmbedding,
    capture: bool = True,
    tag: str = "x",
) -> DenoiserOutput:
    """Predict noise; optionally hand back the cross-attention map."""
    eps, attn, _ = forward_graph(model, xt, t, c)
    attention = (
        CrossAttentionMap(matrix=attn.value, timestep=int(t), tag=tag)
        if capture
        else None
    )
    return DenoiserOutput(eps_pred=eps.value, attention=attention)


def train_toy(
    model: ToyDenoiser,
    dataset: Sequence[Tuple[Array, PromptEmbedding]],
    steps: int,
    lr: float,
    rng: SeededRng,
    sched: NoiseSchedule,
) -> Tuple[ToyDenoiser, Array]:
    """Noise-prediction training with per-sample SGD.

    Each step: draw a sample, a uniform timestep and a fresh noise, form the
    noised latent, and take one gradient step on the per-element squared
    error.  One draw in ten replaces the prompt with the empty prompt so
    classifier-free guidance has an unconditional branch.  Returns the
    per-step loss curve.
    """
    if not dataset:
        raise ParameterError("training dataset is empty")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if sched.t_train != model.t_train:
        raise ParameterError(
            f"schedule length {sched.t_train} != model t_train {model.t_train}"
        )
    empty = PromptEmbedding.empty()
    curve = np.zeros(steps, dtype=np.float32)
    lr32 = np.float32(lr)
    for step in range(steps):
        idx = rng.integer(0, len(dataset))
        t = rng.integer(0, model.t_train)
        x0, emb = dataset[idx]
        eps = rng.normal(x0.shape)
        xt = q_sample(x0, t, eps, sched)
        if rng.uniform() < EMPTY_PROMPT_FRACTION:
            emb = empty

        pvars = {
            name: ad.tracked(model.params[name]) for name in TRAINABLE_PARAMS
        }
        pvars["temb_table"] = ad.constant(model.params["temb_table"])
        eps_var, _, _ = forward_graph(model, xt, t, emb, param_vars=pvars)
        loss = ad.mean_all(ad.square(ad.sub(eps_var, ad.constant(eps))))
        grads = ad.backprop(loss)
        for name in TRAINABLE_PARAMS:
            g = grads.get(id(pvars[name]))
            if g is not None:
                model.params[name] = (
                    model.params[name] - lr32 * g
                ).astype(np.float32)
        curve[step] = float(loss.value)
    return model, curve


# -- identity image codec -------------------------------------------------

def encode_image(image: Array) -> Array:
    """Map an S x S grayscale image in [0, 1] to an S x S x 1 latent in [-1, 1]."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"expected S x S grayscale image, got shape {image.shape}")
    return (image.astype(np.float32) * 2.0 - 1.0)[:, :, None].astype(np.float32)


def decode_latent(latent: Array) -> Array:
    """Invert encode_image and clamp to [0, 1]."""
    latent = np.asarray(latent)
    if latent.ndim != 3 or latent.shape[2] != 1:
        raise ShapeError(f"expected S x S x 1 latent, got shape {latent.shape}")
    return np.clip((latent[:, :, 0].astype(np.float32) + 1.0) / 2.0, 0.0, 1.0).astype(
        np.float32
    )
