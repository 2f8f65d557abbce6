"""Run configuration: key=value files plus command-line overrides.

A config file holds one `key = value` pair per line; `#` starts a comment.
Keys match RunConfig field names.  Values are converted by the field's
declared type, so unknown keys and malformed values fail loudly rather
than drifting through the pipeline as strings.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

from .errors import ParameterError
from .guidance import EditConfig
from .noisereg import NoiseRegConfig
from .schedule import NoiseSchedule, build_schedule

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RunConfig:
    # data
    size: int = 32
    n_images: int = 8
    shapes: str = "disc,square"
    textures: str = "solid,striped"
    source_word: str = "disc"
    target_word: str = "square"
    # model / training
    t_train: int = 300
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: int = 32
    train_steps: int = 5000
    lr: float = 1e-3
    # editing
    n_steps: int = 60
    cfg_scale: float = 3.0
    lambda_xa: float = 0.1
    lambda_rev: float = 0.05
    rev_steps: str = "10,15,20,25"
    rev_decay: float = 0.5
    w_mid: float = 0.5
    w_high: float = 1.0
    fusion_mode: str = "sliding"
    reg_iters: int = 5
    reg_step: float = 1e-4
    reg_lam: float = 1.0
    # bookkeeping
    seed: int = 0


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    field = _FIELDS.get(key)
    if field is None:
        raise ParameterError(
            f"unknown config key {key!r}; known keys: "
            f"{', '.join(sorted(_FIELDS))}"
        )
    raw = raw.strip()
    try:
        if field.type == "int" or field.type is int:
            return int(raw)
        if field.type == "float" or field.type is float:
            return float(raw)
    except ValueError as exc:
        raise ParameterError(f"config key {key!r}: {exc}") from exc
    return raw


def parse_config_lines(lines: Sequence[str], base: RunConfig = RunConfig()) -> RunConfig:
    updates = {}
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParameterError(
                f"config line {lineno}: expected key = value, got {line.strip()!r}"
            )
        key, raw = body.split("=", 1)
        key = key.strip()
        updates[key] = _convert(key, raw)
    return dataclasses.replace(base, **updates)


def load_config(path: PathLike, base: RunConfig = RunConfig()) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_lines(text.splitlines(), base)


def apply_overrides(cfg: RunConfig, overrides: Sequence[str]) -> RunConfig:
    """Apply `key=value` strings on top of an existing config."""
    return parse_config_lines(list(overrides), cfg)


def _split_words(raw: str) -> Tuple[str, ...]:
    return tuple(w.strip() for w in raw.split(",") if w.strip())


def shape_list(cfg: RunConfig) -> Tuple[str, ...]:
    return _split_words(cfg.shapes)


def texture_list(cfg: RunConfig) -> Tuple[str, ...]:
    return _split_words(cfg.textures)


def rev_step_list(cfg: RunConfig) -> Tuple[int, ...]:
    try:
        return tuple(int(w) for w in _split_words(cfg.rev_steps))
    except ValueError as exc:
        raise ParameterError(f"rev_steps: {exc}") from exc


def edit_config_from(cfg: RunConfig) -> EditConfig:
    return EditConfig(
        n_steps=cfg.n_steps,
        cfg_scale=cfg.cfg_scale,
        lambda_xa=cfg.lambda_xa,
        lambda_rev=cfg.lambda_rev,
        rev_steps=rev_step_list(cfg),
        rev_decay=cfg.rev_decay,
        w_mid=cfg.w_mid,
        w_high=cfg.w_high,
        fusion_mode=cfg.fusion_mode,
        reg=NoiseRegConfig(
            k_iters=cfg.reg_iters, step_size=cfg.reg_step, lam=cfg.reg_lam
        ),
    )


def schedule_from(cfg: RunConfig) -> NoiseSchedule:
    return build_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end)


def format_config(cfg: RunConfig) -> str:
    """Canonical key = value rendering, one field per line."""
    lines = []
    for field in dataclasses.fields(RunConfig):
        lines.append(f"{field.name} = {getattr(cfg, field.name)}")
    return "\n".join(lines) + "\n"
