"""Zero-shot image editing on a toy trainable diffusion model.

The package trains a small conditional noise predictor on synthetic shape
images, inverts images deterministically with noise-whiteness refinement,
and edits them by steering cross-attention toward a fused reference while
sampling under classifier-free guidance.
"""

from .config import RunConfig, edit_config_from, load_config, schedule_from
from .dataset import ShapeSample, gen_dataset, ideal_mask, render_shape
from .denoiser import (
    CrossAttentionMap,
    DenoiserOutput,
    ToyDenoiser,
    decode_latent,
    denoise,
    encode_image,
    init_model,
    train_toy,
)
from .errors import FormatError, ParameterError, ShapeError
from .guidance import (
    AttentionTrace,
    EditConfig,
    EditResult,
    ReferenceTrace,
    ablation_variant,
    cooperative_update,
    edit,
    guided_edit_step,
    invert_image,
    predict_noise,
    reconstruct,
    reconstruct_with_capture,
    sliding_fusion,
    xa_loss,
)
from .metrics import classify_shape, edit_score, lag1_autocorr, mask_iou, relative_l2
from .noisereg import (
    NoisePyramid,
    NoiseRegConfig,
    auto_loss,
    build_pyramid,
    kl_loss,
    pair_loss,
    regularize_noise,
)
from .prompts import (
    EditDirection,
    PromptEmbedding,
    RichPromptLadder,
    apply_direction,
    direction_from_banks,
    edit_direction,
    embed_sentence,
    embed_tokens,
    make_ladder,
    sentence_vector,
)
from .rng import SeededRng, derive_seed
from .schedule import (
    NoiseSchedule,
    StepSequence,
    build_schedule,
    ddim_denoise_step,
    ddim_invert_step,
    make_step_sequence,
    predict_x0,
    q_sample,
)
from .serialization import (
    load_bundle,
    load_checkpoint,
    load_tensor,
    save_bundle,
    save_checkpoint,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "CrossAttentionMap",
    "DenoiserOutput",
    "EditConfig",
    "EditDirection",
    "EditResult",
    "FormatError",
    "NoisePyramid",
    "NoiseRegConfig",
    "NoiseSchedule",
    "ParameterError",
    "PromptEmbedding",
    "ReferenceTrace",
    "RichPromptLadder",
    "RunConfig",
    "SeededRng",
    "ShapeError",
    "ShapeSample",
    "StepSequence",
    "ToyDenoiser",
    "ablation_variant",
    "apply_direction",
    "auto_loss",
    "build_pyramid",
    "build_schedule",
    "classify_shape",
    "cooperative_update",
    "ddim_denoise_step",
    "ddim_invert_step",
    "decode_latent",
    "denoise",
    "derive_seed",
    "direction_from_banks",
    "edit",
    "edit_config_from",
    "edit_direction",
    "edit_score",
    "embed_sentence",
    "embed_tokens",
    "encode_image",
    "gen_dataset",
    "guided_edit_step",
    "ideal_mask",
    "init_model",
    "invert_image",
    "kl_loss",
    "lag1_autocorr",
    "load_bundle",
    "load_checkpoint",
    "load_config",
    "load_tensor",
    "make_ladder",
    "make_step_sequence",
    "mask_iou",
    "pair_loss",
    "predict_noise",
    "predict_x0",
    "q_sample",
    "reconstruct",
    "reconstruct_with_capture",
    "regularize_noise",
    "relative_l2",
    "render_shape",
    "save_bundle",
    "save_checkpoint",
    "save_tensor",
    "schedule_from",
    "sentence_vector",
    "sliding_fusion",
    "train_toy",
    "xa_loss",
]
