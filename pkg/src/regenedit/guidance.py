"""Zero-shot editing by attention guidance around a deterministic sampler.

The pipeline: invert a source latent to the noisiest step while refining
each predicted noise (see noisereg), replay three capture trajectories
whose prompts carry the edit direction at weights (0, w_mid, w_high), fuse
their attention maps into a per-step reference, then run the actual edit
trajectory under classifier-free guidance while pulling its attention
toward the reference.  At a few early steps a cooperative update also
pulls the source-prompt attention of the current latent toward the same
reference, with a strength that halves per application.

Inversion queries the model at the upper step of each hop, so a later
reconstruction queries the model at exactly the same step indices and the
round trip closes up to the frozen-noise approximation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .denoiser import CrossAttentionMap, ToyDenoiser, denoise, forward_graph
from .errors import ParameterError, ShapeError
from .noisereg import NoiseRegConfig, regularize_noise
from .prompts import EditDirection, PromptEmbedding, RichPromptLadder, make_ladder
from .schedule import (
    NoiseSchedule,
    StepSequence,
    ddim_denoise_step,
    ddim_invert_step,
    make_step_sequence,
    predict_x0,
    q_sample,
)

Array = np.ndarray

FUSION_MODES = ("sliding", "simple", "sliding_no_center", "distance")
MAX_BACKTRACK = 8


@dataclass(frozen=True)
class EditConfig:
    """Knobs for the full editing pass; defaults are the tuned operating point."""

    n_steps: int = 60
    cfg_scale: float = 3.0
    lambda_xa: float = 0.1
    lambda_rev: float = 0.05
    rev_steps: Tuple[int, ...] = (10, 15, 20, 25)
    rev_decay: float = 0.5
    w_mid: float = 0.5
    w_high: float = 1.0
    fusion_mode: str = "sliding"
    reg: NoiseRegConfig = NoiseRegConfig()


def check_edit_config(cfg: EditConfig) -> EditConfig:
    if cfg.n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {cfg.n_steps}")
    if cfg.cfg_scale < 0.0:
        raise ParameterError(f"cfg_scale must be >= 0, got {cfg.cfg_scale}")
    if cfg.lambda_xa < 0.0 or cfg.lambda_rev < 0.0:
        raise ParameterError("guidance strengths must be >= 0")
    if not 0.0 < cfg.rev_decay <= 1.0:
        raise ParameterError(f"rev_decay must be in (0, 1], got {cfg.rev_decay}")
    if not 0.0 < cfg.w_mid < cfg.w_high:
        raise ParameterError(
            f"need 0 < w_mid < w_high, got {cfg.w_mid}, {cfg.w_high}"
        )
    if cfg.fusion_mode not in FUSION_MODES:
        raise ParameterError(
            f"fusion_mode {cfg.fusion_mode!r} not one of {FUSION_MODES}"
        )
    for j in cfg.rev_steps:
        if not 0 <= int(j) < cfg.n_steps:
            raise ParameterError(
                f"cooperative step {j} outside [0, {cfg.n_steps})"
            )
    return cfg


def ablation_variant(cfg: EditConfig, name: str) -> EditConfig:
    """Named reduced configurations for controlled comparisons.

    none:    no attention guidance at all.
    simple:  same-step fusion only, no cooperative updates.
    sliding: windowed fusion, no cooperative updates.
    coop:    windowed fusion plus cooperative updates (the full method).
    """
    if name == "none":
        return dataclasses.replace(cfg, lambda_xa=0.0, lambda_rev=0.0)
    if name == "simple":
        return dataclasses.replace(cfg, fusion_mode="simple", lambda_rev=0.0)
    if name == "sliding":
        return dataclasses.replace(cfg, fusion_mode="sliding", lambda_rev=0.0)
    if name == "coop":
        return dataclasses.replace(cfg, fusion_mode="sliding")
    raise ParameterError(
        f"unknown ablation {name!r}; expected none, simple, sliding, or coop"
    )


# -- traces ---------------------------------------------------------------

@dataclass(frozen=True)
class AttentionTrace:
    """Per-step attention maps along one trajectory, index 0 = noisiest."""

    tag: str
    timesteps: Tuple[int, ...]
    maps: Tuple[Array, ...]

    def __len__(self) -> int:
        return len(self.maps)


@dataclass(frozen=True)
class ReferenceTrace:
    """Fused per-step reference attention, aligned with AttentionTrace order."""

    timesteps: Tuple[int, ...]
    maps: Tuple[Array, ...]

    def __len__(self) -> int:
        return len(self.maps)


@dataclass(frozen=True)
class InversionResult:
    latent: Array       # latent at the noisiest step of the sequence
    eps_last: Array     # final (possibly refined) noise prediction
    timestep: int       # step index the latent lives at


@dataclass(frozen=True)
class StepDiag:
    """Per-step bookkeeping emitted by the edit loop."""

    step_index: int
    timestep: int
    xa_pre: Optional[float]
    xa_post: Optional[float]
    xa_step: Optional[float]
    rev_pre: Optional[float]
    rev_post: Optional[float]
    rev_lambda: Optional[float]


@dataclass
class EditResult:
    latent: Array                      # edited clean latent
    inverted: Array                    # latent the edit started from
    diags: Tuple[StepDiag, ...]
    reference: Optional[ReferenceTrace] = None


# -- noise prediction with classifier-free mixing -------------------------

def predict_noise(
    model: ToyDenoiser,
    x: Array,
    t: int,
    c: PromptEmbedding,
    cfg_scale: float = 1.0,
    capture: bool = False,
    tag: str = "x",
) -> Tuple[Array, Optional[CrossAttentionMap]]:
    """Conditional prediction, optionally mixed against the empty prompt.

    Scale 1 returns the conditional branch exactly (no extra evaluation);
    scale 0 returns the unconditional branch exactly.  The captured map
    always comes from the conditional branch.
    """
    out_c = denoise(model, x, t, c, capture=capture, tag=tag)
    if cfg_scale == 1.0:
        return out_c.eps_pred, out_c.attention
    out_u = denoise(model, x, t, PromptEmbedding.empty(), capture=False)
    if cfg_scale == 0.0:
        return out_u.eps_pred, out_c.attention
    eps = out_u.eps_pred + np.float32(cfg_scale) * (
        out_c.eps_pred - out_u.eps_pred
    )
    return eps.astype(np.float32), out_c.attention


# -- inversion and reconstruction -----------------------------------------

def invert_image(
    model: ToyDenoiser,
    x0: Array,
    c: PromptEmbedding,
    sched: NoiseSchedule,
    seq: StepSequence,
    reg: Optional[NoiseRegConfig] = None,
) -> InversionResult:
    """Deterministically noise a clean latent up the step sequence.

    The model is queried at the upper step of every hop.  Each predicted
    noise is refined by the autocorrelation objective before being used,
    unless `reg` is None or runs zero iterations.
    """
    n = len(seq)
    if n < 1:
        raise ParameterError("step sequence is empty")

    def refine(eps: Array) -> Array:
        if reg is None or reg.k_iters == 0:
            return eps
        return regularize_noise(eps, reg.k_iters, reg.step_size, reg.lam)

    eps = refine(denoise(model, x0, seq[0], c, capture=False).eps_pred)
    x = q_sample(x0, seq[0], eps, sched)
    for i in range(1, n):
        eps = refine(denoise(model, x, seq[i], c, capture=False).eps_pred)
        x = ddim_invert_step(x, seq[i - 1], seq[i], eps, sched)
    return InversionResult(latent=x, eps_last=eps, timestep=seq[n - 1])


def reconstruct(
    model: ToyDenoiser,
    latent: Array,
    c: PromptEmbedding,
    sched: NoiseSchedule,
    seq: StepSequence,
    cfg_scale: float = 1.0,
) -> Array:
    """Plain deterministic sampling from the noisiest step down to clean."""
    n = len(seq)
    if n < 1:
        raise ParameterError("step sequence is empty")
    x = latent
    for i in range(n - 1, 0, -1):
        eps, _ = predict_noise(model, x, seq[i], c, cfg_scale)
        x = ddim_denoise_step(x, seq[i], seq[i - 1], eps, sched)
    eps, _ = predict_noise(model, x, seq[0], c, cfg_scale)
    return predict_x0(x, seq[0], eps, sched)


def reconstruct_with_capture(
    model: ToyDenoiser,
    latent: Array,
    ladder: RichPromptLadder,
    sched: NoiseSchedule,
    seq: StepSequence,
) -> Tuple[Array, Dict[str, AttentionTrace]]:
    """Reconstruct with the base prompt while recording ladder attention.

    The trajectory advances using ladder.base only; the mid and high
    rungs are evaluated on the same latent at every step purely to
    record their maps (tags "yp" and "y", "x" for the base).  Returns
    the clean reconstruction and the three aligned traces.
    """
    n = len(seq)
    x = latent
    rungs = (("x", ladder.base), ("yp", ladder.mid), ("y", ladder.high))
    maps: Dict[str, List[Array]] = {tag: [] for tag, _ in rungs}
    steps: List[int] = []

    def record(xt: Array, t: int) -> Array:
        eps_base = None
        for tag, c in rungs:
            out = denoise(model, xt, t, c, capture=True, tag=tag)
            maps[tag].append(out.attention.matrix)
            if tag == "x":
                eps_base = out.eps_pred
        steps.append(t)
        return eps_base

    for i in range(n - 1, 0, -1):
        eps = record(x, seq[i])
        x = ddim_denoise_step(x, seq[i], seq[i - 1], eps, sched)
    eps = record(x, seq[0])
    x = predict_x0(x, seq[0], eps, sched)
    traces = {
        tag: AttentionTrace(tag=tag, timesteps=tuple(steps), maps=tuple(maps[tag]))
        for tag, _ in rungs
    }
    return x, traces


# -- fusion ----------------------------------------------------------------

def fusion_members(j: int, n: int, mode: str = "sliding") -> List[Tuple[str, int, float]]:
    """(tag, step index, weight) triples entering the fused map at step j."""
    if not 0 <= j < n:
        raise ParameterError(f"step index {j} outside [0, {n})")
    if mode not in FUSION_MODES:
        raise ParameterError(f"fusion_mode {mode!r} not one of {FUSION_MODES}")
    if mode == "simple":
        return [("x", j, 1.0), ("yp", j, 1.0), ("y", j, 1.0)]
    members: List[Tuple[str, int, float]] = [("x", j, 1.0)]
    offsets = (-1, 1) if mode == "sliding_no_center" else (-1, 0, 1)
    for off in offsets:
        jp = j + off
        if not 0 <= jp < n:
            continue
        w = 1.0 / (1.0 + abs(off)) if mode == "distance" else 1.0
        members.append(("yp", jp, w))
        members.append(("y", jp, w))
    return members


def sliding_fusion(
    traces: Dict[str, AttentionTrace], mode: str = "sliding"
) -> ReferenceTrace:
    """Fuse capture traces into a per-step reference attention.

    Each fused map is a convex combination of row-stochastic maps, so rows
    still sum to one.  The default window takes the unmodified-prompt map
    at the current step plus both ladder maps at the current and adjacent
    steps (boundary steps have one fewer neighbor).
    """
    for tag in ("x", "yp", "y"):
        if tag not in traces:
            raise ParameterError(f"missing capture trace {tag!r}")
    n = len(traces["x"])
    base_steps = traces["x"].timesteps
    shape = traces["x"].maps[0].shape
    for tag in ("yp", "y"):
        if len(traces[tag]) != n or traces[tag].timesteps != base_steps:
            raise ParameterError(
                f"trace {tag!r} is not aligned with the base trace"
            )
        if traces[tag].maps[0].shape != shape:
            raise ShapeError(
                f"trace {tag!r} maps have shape {traces[tag].maps[0].shape}, "
                f"expected {shape}"
            )
    fused: List[Array] = []
    for j in range(n):
        acc = np.zeros(shape, dtype=np.float64)
        total = 0.0
        for tag, jp, w in fusion_members(j, n, mode):
            acc += w * traces[tag].maps[jp].astype(np.float64)
            total += w
        fused.append((acc / total).astype(np.float32))
    return ReferenceTrace(timesteps=base_steps, maps=tuple(fused))


# -- attention-pull updates ------------------------------------------------

def xa_loss(m_a: Array, m_b: Array) -> float:
    """Euclidean norm of the difference of two attention maps."""
    m_a = np.asarray(m_a)
    m_b = np.asarray(m_b)
    if m_a.shape != m_b.shape:
        raise ShapeError(f"attention shapes {m_a.shape} and {m_b.shape} differ")
    diff = m_a.astype(np.float64) - m_b.astype(np.float64)
    return float(np.sqrt(np.sum(diff * diff)))


def _loss_at(
    model: ToyDenoiser, x: Array, t: int, c: PromptEmbedding, m_ref: Array
) -> float:
    out = denoise(model, x, t, c, capture=True)
    return xa_loss(out.attention.matrix, m_ref)


def attention_pull(
    model: ToyDenoiser,
    x: Array,
    t: int,
    c: PromptEmbedding,
    m_ref: Array,
    lam: float,
) -> Tuple[Array, float, float, float]:
    """One descent move of x against the attention-match loss.

    Takes the gradient step of size `lam`, halving it (up to MAX_BACKTRACK
    times) while the loss would increase; if no shrunk step helps, x is
    returned unchanged.  Returns (new x, loss before, loss after, step
    actually taken).
    """
    eps_var, attn_var, x_var = forward_graph(model, x, t, c, track_input=True)
    del eps_var
    loss_var = ad.frob_norm(ad.sub(attn_var, ad.constant(m_ref)))
    pre = xa_loss(attn_var.value, m_ref)
    if lam == 0.0 or pre == 0.0:
        return x, pre, pre, 0.0
    grads = ad.backprop(loss_var)
    g = grads.get(id(x_var))
    if g is None or not np.any(g):
        return x, pre, pre, 0.0
    step = float(lam)
    for _ in range(MAX_BACKTRACK + 1):
        cand = (x - np.float32(step) * g).astype(np.float32)
        post = _loss_at(model, cand, t, c, m_ref)
        if post <= pre:
            return cand, pre, post, step
        step *= 0.5
    return x, pre, pre, 0.0


def cooperative_update(
    model: ToyDenoiser,
    x: Array,
    t: int,
    c_base: PromptEmbedding,
    m_ref: Array,
    lam_rev: float,
) -> Tuple[Array, float, float]:
    """Pull the source-prompt attention of the latent toward the reference."""
    x_new, pre, post, _ = attention_pull(model, x, t, c_base, m_ref, lam_rev)
    return x_new, pre, post


def guided_edit_step(
    model: ToyDenoiser,
    x: Array,
    j: int,
    seq: StepSequence,
    c_edit: PromptEmbedding,
    m_ref: Array,
    sched: NoiseSchedule,
    cfg: EditConfig,
) -> Tuple[Array, float, float, float]:
    """Attention-pulled descent move followed by one sampling hop.

    j counts sampling steps from the noisiest end; the final j runs the
    clean-sample prediction instead of a hop.  Returns the next latent and
    the (pre, post, step) numbers of the attention update.
    """
    n = len(seq)
    if not 0 <= j < n:
        raise ParameterError(f"step index {j} outside [0, {n})")
    t_from = seq[n - 1 - j]
    x, pre, post, step = attention_pull(
        model, x, t_from, c_edit, m_ref, cfg.lambda_xa
    )
    eps, _ = predict_noise(model, x, t_from, c_edit, cfg.cfg_scale)
    if j < n - 1:
        x_next = ddim_denoise_step(x, t_from, seq[n - 2 - j], eps, sched)
    else:
        x_next = predict_x0(x, t_from, eps, sched)
    return x_next, pre, post, step


# -- the full editing pass -------------------------------------------------

def edit(
    model: ToyDenoiser,
    source_latent: Array,
    c_src: PromptEmbedding,
    direction: EditDirection,
    sched: NoiseSchedule,
    cfg: EditConfig = EditConfig(),
    keep_reference: bool = False,
) -> EditResult:
    """Run the whole editing pipeline on one clean source latent."""
    check_edit_config(cfg)
    seq = make_step_sequence(sched, cfg.n_steps)
    n = len(seq)
    ladder = make_ladder(c_src, direction, cfg.w_mid, cfg.w_high)

    inv = invert_image(model, source_latent, c_src, sched, seq, reg=cfg.reg)
    _, traces = reconstruct_with_capture(model, inv.latent, ladder, sched, seq)
    reference = sliding_fusion(traces, mode=cfg.fusion_mode)

    rev_set = {int(j) for j in cfg.rev_steps}
    lam_rev = float(cfg.lambda_rev)
    x = inv.latent
    diags: List[StepDiag] = []
    for j in range(n):
        t_from = seq[n - 1 - j]
        m_ref = reference.maps[j]
        rev_pre = rev_post = rev_lambda = None
        if j in rev_set and lam_rev > 0.0:
            x, rev_pre, rev_post = cooperative_update(
                model, x, t_from, ladder.base, m_ref, lam_rev
            )
            rev_lambda = lam_rev
            lam_rev *= cfg.rev_decay
        if cfg.lambda_xa > 0.0:
            x, xa_pre, xa_post, xa_step = guided_edit_step(
                model, x, j, seq, ladder.high, m_ref, sched, cfg
            )
        else:
            xa_pre = xa_post = xa_step = None
            eps, _ = predict_noise(model, x, t_from, ladder.high, cfg.cfg_scale)
            if j < n - 1:
                x = ddim_denoise_step(x, t_from, seq[n - 2 - j], eps, sched)
            else:
                x = predict_x0(x, t_from, eps, sched)
        diags.append(
            StepDiag(
                step_index=j,
                timestep=t_from,
                xa_pre=xa_pre,
                xa_post=xa_post,
                xa_step=xa_step,
                rev_pre=rev_pre,
                rev_post=rev_post,
                rev_lambda=rev_lambda,
            )
        )
    return EditResult(
        latent=x,
        inverted=inv.latent,
        diags=tuple(diags),
        reference=reference if keep_reference else None,
    )
