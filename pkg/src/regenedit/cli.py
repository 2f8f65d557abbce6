"""Command-line front end.

Subcommands cover the whole workflow: synthesize a captioned dataset,
train the toy denoiser, invert and reconstruct single images, compute an
edit direction from sentence banks, run guided edits (optionally reduced
via --ablate and parallelized via --jobs), and score an edit directory.
Every command writes delimited .tsv tables plus rendered PNG figures into
its --out directory; identical seed and config give identical bytes.

Exit codes: 0 on success, 1 for bad parameters or usage, 2 for missing or
malformed files.
"""

from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from .config import (
    RunConfig,
    apply_overrides,
    edit_config_from,
    load_config,
    rev_step_list,
    schedule_from,
    shape_list,
    texture_list,
)
from .dataset import SHAPES, gen_dataset
from .denoiser import decode_latent, encode_image, init_model, train_toy
from .errors import FormatError, ParameterError
from .guidance import ablation_variant, edit, invert_image, reconstruct
from .metrics import (
    classify_shape,
    edit_score,
    lag1_autocorr,
    mask_iou,
    median,
    relative_l2,
)
from .prompts import direction_from_banks, embed_sentence
from .report import (
    save_edit_panel,
    save_guidance_trace,
    save_image_png,
    save_loss_curve,
    save_metric_bars,
    save_montage,
)
from .rng import SeededRng, derive_seed
from .schedule import make_step_sequence
from .serialization import load_checkpoint, load_tensor, save_checkpoint, save_tensor

MANIFEST_COLUMNS = ("index", "shape", "texture", "cx", "cy", "radius", "caption", "file")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.8g}"
    return str(value)


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_tsv(path: Path) -> List[Dict[str, str]]:
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty table")
    header = lines[0].split("\t")
    rows = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise FormatError(f"{path}: row has {len(cells)} cells, expected {len(header)}")
        rows.append(dict(zip(header, cells)))
    return rows


def _read_manifest(data_dir: Path) -> List[Dict[str, str]]:
    rows = _read_tsv(data_dir / "manifest.tsv")
    for row in rows:
        for col in MANIFEST_COLUMNS:
            if col not in row:
                raise FormatError(f"manifest is missing column {col!r}")
    return rows


def _load_sample_image(data_dir: Path, row: Dict[str, str]) -> np.ndarray:
    return load_tensor(data_dir / row["file"])


def _run_config(
    config_path: Optional[str], seed: Optional[int], overrides: Sequence[str] = ()
) -> RunConfig:
    cfg = RunConfig()
    if config_path is not None:
        cfg = load_config(config_path, cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = apply_overrides(cfg, [f"seed={int(seed)}"])
    return cfg


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _common_options(f):
    f = click.option(
        "--config", "config_path", default=None, help="key = value config file."
    )(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--out", "out", required=True, help="Output directory.")(f)
    f = click.option(
        "--set",
        "overrides",
        multiple=True,
        help="Inline config override, key=value; repeatable.",
    )(f)
    return f


@click.group()
def cli() -> None:
    """Zero-shot shape editing on a toy trainable diffusion model."""


@cli.command("gen-data")
@_common_options
@click.option("--count", type=int, default=None, help="Number of images to draw.")
def cmd_gen_data(config_path, seed, out, overrides, count) -> None:
    """Synthesize captioned shape images plus a manifest and montage."""
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    n = int(count) if count is not None else cfg.n_images
    rng = SeededRng(derive_seed(cfg.seed, "data"))
    samples = gen_dataset(n, cfg.size, rng, shape_list(cfg), texture_list(cfg))
    rows = []
    for i, sample in enumerate(samples):
        name = f"img_{i:03d}.rdt"
        save_tensor(out_path / name, sample.image)
        rows.append(
            (i, sample.shape, sample.texture, sample.cx, sample.cy,
             sample.radius, sample.caption, name)
        )
    _write_tsv(out_path / "manifest.tsv", MANIFEST_COLUMNS, rows)
    save_montage(
        [s.image for s in samples[:16]],
        out_path / "dataset.png",
        titles=[s.caption for s in samples[:16]],
    )
    click.echo(f"wrote {n} samples to {out_path}")


@cli.command("train")
@_common_options
@click.option("--data", "data_dir", required=True, help="Directory from gen-data.")
def cmd_train(config_path, seed, out, overrides, data_dir) -> None:
    """Train the toy denoiser on a generated dataset."""
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    data_path = Path(data_dir)
    rows = _read_manifest(data_path)
    pairs = [
        (encode_image(_load_sample_image(data_path, row)), embed_sentence(row["caption"]))
        for row in rows
    ]
    sched = schedule_from(cfg)
    model = init_model(
        cfg.t_train,
        SeededRng(derive_seed(cfg.seed, "init")),
        channels=1,
        hidden=cfg.hidden,
    )
    model, curve = train_toy(
        model,
        pairs,
        steps=cfg.train_steps,
        lr=cfg.lr,
        rng=SeededRng(derive_seed(cfg.seed, "train")),
        sched=sched,
    )
    save_checkpoint(out_path / "model.rdmw", model)
    _write_tsv(
        out_path / "loss.tsv",
        ("step", "loss"),
        [(i, float(v)) for i, v in enumerate(curve)],
    )
    save_loss_curve(curve, out_path / "loss.png")
    tail = float(np.mean(curve[-100:])) if curve.size >= 100 else float(np.mean(curve))
    click.echo(f"trained {cfg.train_steps} steps; final mean loss {tail:.5f}")


def _prepare_edit_inputs(cfg: RunConfig, model_path: str):
    model = load_checkpoint(model_path)
    sched = schedule_from(cfg)
    seq = make_step_sequence(sched, cfg.n_steps)
    return model, sched, seq


@cli.command("invert")
@_common_options
@click.option("--model", "model_path", required=True, help="Checkpoint file.")
@click.option("--data", "data_dir", required=True, help="Directory from gen-data.")
@click.option("--index", type=int, default=0, help="Sample index to invert.")
def cmd_invert(config_path, seed, out, overrides, model_path, data_dir, index) -> None:
    """Invert one image to the noisiest step; report noise whiteness."""
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    data_path = Path(data_dir)
    rows = _read_manifest(data_path)
    if not 0 <= index < len(rows):
        raise ParameterError(f"index {index} outside dataset of {len(rows)}")
    row = rows[index]
    model, sched, seq = _prepare_edit_inputs(cfg, model_path)
    image = _load_sample_image(data_path, row)
    latent = encode_image(image)
    result = invert_image(
        model, latent, embed_sentence(row["caption"]), sched, seq,
        reg=edit_config_from(cfg).reg,
    )
    save_tensor(out_path / "inverted.rdt", result.latent)
    save_tensor(out_path / "eps_last.rdt", result.eps_last)
    lag1 = lag1_autocorr(result.eps_last)
    _write_tsv(
        out_path / "invert.tsv",
        ("index", "timestep", "lag1", "eps_norm", "latent_norm"),
        [(
            index,
            result.timestep,
            lag1,
            float(np.linalg.norm(result.eps_last.astype(np.float64))),
            float(np.linalg.norm(result.latent.astype(np.float64))),
        )],
    )
    spread = float(np.max(np.abs(result.latent))) or 1.0
    save_edit_panel(
        [image, (result.latent[:, :, 0] / (2.0 * spread)) + 0.5],
        ["source", "inverted latent"],
        out_path / "invert.png",
    )
    click.echo(f"inverted sample {index}; lag-1 autocorrelation {lag1:.4f}")


@cli.command("reconstruct")
@_common_options
@click.option("--model", "model_path", required=True, help="Checkpoint file.")
@click.option("--data", "data_dir", required=True, help="Directory from gen-data.")
@click.option("--index", type=int, default=0, help="Sample index to round-trip.")
def cmd_reconstruct(config_path, seed, out, overrides, model_path, data_dir, index) -> None:
    """Invert then sample back; report the round-trip error."""
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    data_path = Path(data_dir)
    rows = _read_manifest(data_path)
    if not 0 <= index < len(rows):
        raise ParameterError(f"index {index} outside dataset of {len(rows)}")
    row = rows[index]
    model, sched, seq = _prepare_edit_inputs(cfg, model_path)
    image = _load_sample_image(data_path, row)
    latent = encode_image(image)
    c = embed_sentence(row["caption"])
    inv = invert_image(model, latent, c, sched, seq, reg=edit_config_from(cfg).reg)
    recon = reconstruct(model, inv.latent, c, sched, seq)
    err = relative_l2(recon, latent)
    save_tensor(out_path / "recon.rdt", recon)
    recon_image = decode_latent(recon)
    save_image_png(out_path / "recon.png", recon_image)
    _write_tsv(
        out_path / "roundtrip.tsv",
        ("index", "rel_l2"),
        [(index, err)],
    )
    save_edit_panel(
        [image, recon_image], ["source", "reconstruction"], out_path / "panel.png"
    )
    click.echo(f"round trip for sample {index}: relative L2 {err:.5f}")


@cli.command("direction")
@_common_options
@click.option("--source", "source_word", default=None, help="Source bank word.")
@click.option("--target", "target_word", default=None, help="Target bank word.")
@click.option("--banks", "banks_dir", default=None, help="Override sentence bank directory.")
def cmd_direction(config_path, seed, out, overrides, source_word, target_word, banks_dir) -> None:
    """Compute an embedding-space edit direction from sentence banks."""
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    src = source_word or cfg.source_word
    tgt = target_word or cfg.target_word
    banks = Path(banks_dir) if banks_dir is not None else None
    direction = direction_from_banks(src, tgt, banks)
    save_tensor(out_path / "direction.rdt", direction.vector)
    _write_tsv(
        out_path / "direction.tsv",
        ("dim", "value"),
        [(i, float(v)) for i, v in enumerate(direction.vector)],
    )
    norm = float(np.linalg.norm(direction.vector.astype(np.float64)))
    click.echo(f"direction {src} -> {tgt}; norm {norm:.5f}")


def _classify_row(cfg: RunConfig, edited: np.ndarray) -> Tuple[str, bool]:
    if cfg.target_word in SHAPES:
        predicted = classify_shape(edited)
        return predicted, predicted == cfg.target_word
    return "", False


def _edit_one(
    cfg: RunConfig,
    model_path: str,
    data_dir: str,
    row: Dict[str, str],
    ablate: Optional[str],
    out_dir: str,
) -> Tuple:
    index = int(row["index"])
    model, sched, seq = _prepare_edit_inputs(cfg, model_path)
    del seq
    edit_cfg = edit_config_from(cfg)
    direction = direction_from_banks(cfg.source_word, cfg.target_word)
    image = _load_sample_image(Path(data_dir), row)
    latent = encode_image(image)
    result = edit(
        model, latent, embed_sentence(row["caption"]), direction, sched, edit_cfg
    )
    edited = decode_latent(result.latent)
    out_path = Path(out_dir)
    save_tensor(out_path / f"edit_{index:03d}.rdt", result.latent)
    save_image_png(out_path / f"edit_{index:03d}.png", edited)
    save_edit_panel(
        [image, edited], ["source", "edited"], out_path / f"panel_{index:03d}.png"
    )
    diag_rows = []
    for d in result.diags:
        diag_rows.append(
            (
                d.step_index,
                d.timestep,
                "" if d.xa_pre is None else _fmt(d.xa_pre),
                "" if d.xa_post is None else _fmt(d.xa_post),
                "" if d.xa_step is None else _fmt(d.xa_step),
                "" if d.rev_pre is None else _fmt(d.rev_pre),
                "" if d.rev_post is None else _fmt(d.rev_post),
                "" if d.rev_lambda is None else _fmt(d.rev_lambda),
            )
        )
    _write_tsv(
        out_path / f"diag_{index:03d}.tsv",
        ("step", "timestep", "xa_pre", "xa_post", "xa_step", "rev_pre", "rev_post", "rev_lambda"),
        diag_rows,
    )
    xa_pairs = [(d.xa_pre, d.xa_post) for d in result.diags if d.xa_pre is not None]
    rev_pairs = [(d.rev_pre, d.rev_post) for d in result.diags if d.rev_pre is not None]
    xa_ok = all(post <= pre for pre, post in xa_pairs) if xa_pairs else True
    rev_ok = all(post <= pre for pre, post in rev_pairs) if rev_pairs else True
    steps = [d.step_index for d in result.diags if d.xa_pre is not None]
    if steps:
        save_guidance_trace(
            steps,
            [d.xa_pre for d in result.diags if d.xa_pre is not None],
            [d.xa_post for d in result.diags if d.xa_pre is not None],
            out_path / f"trace_{index:03d}.png",
        )
    iou_input = mask_iou(edited, image)
    predicted, flipped = _classify_row(cfg, edited)
    base = (index, row["shape"], row["texture"], predicted, flipped,
            iou_input, xa_ok, rev_ok)
    if ablate is None:
        return base + ("", "", "", "")
    abl_cfg = ablation_variant(edit_config_from(cfg), ablate)
    abl_result = edit(
        model, latent, embed_sentence(row["caption"]), direction, sched, abl_cfg
    )
    abl_edited = decode_latent(abl_result.latent)
    save_tensor(out_path / f"edit_{index:03d}_ablate.rdt", abl_result.latent)
    save_image_png(out_path / f"edit_{index:03d}_ablate.png", abl_edited)
    abl_predicted, abl_flipped = _classify_row(cfg, abl_edited)
    return base + (ablate, abl_predicted, abl_flipped, mask_iou(abl_edited, image))


@cli.command("edit")
@_common_options
@click.option("--model", "model_path", required=True, help="Checkpoint file.")
@click.option("--data", "data_dir", required=True, help="Directory from gen-data.")
@click.option("--index", "indices", type=int, multiple=True,
              help="Sample index to edit; repeatable.  Default: every sample "
                   "whose shape matches the configured source word.")
@click.option("--ablate", default=None,
              type=click.Choice(["none", "simple", "sliding", "coop"]),
              help="Also run this reduced configuration and record its "
                   "scores next to the fully guided ones.")
@click.option("--jobs", type=int, default=1, help="Worker processes.")
def cmd_edit(config_path, seed, out, overrides, model_path, data_dir, indices,
             ablate, jobs) -> None:
    """Run the guided edit over dataset samples.

    Each sample is inverted, regenerated with attention capture, and
    resampled under the edit direction with attention guidance.  Success
    is scored with deterministic proxies: class membership by best
    template cross-correlation, structure by foreground-mask IoU against
    the source image.
    """
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    data_path = Path(data_dir)
    rows = _read_manifest(data_path)
    if indices:
        selected = []
        for i in indices:
            if not 0 <= i < len(rows):
                raise ParameterError(f"index {i} outside dataset of {len(rows)}")
            selected.append(rows[i])
    else:
        selected = [row for row in rows if row["shape"] == cfg.source_word]
    if not selected:
        raise ParameterError(
            f"no samples selected (no shape matches {cfg.source_word!r})"
        )
    if jobs < 1:
        raise ParameterError(f"jobs must be >= 1, got {jobs}")
    args = [
        (cfg, model_path, str(data_path), row, ablate, str(out_path))
        for row in selected
    ]
    if jobs == 1:
        results = [_edit_one(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_edit_one_star, args))
    results.sort(key=lambda r: r[0])
    _write_tsv(
        out_path / "edits.tsv",
        ("index", "shape", "texture", "predicted", "flipped", "iou_input",
         "xa_descent", "rev_descent", "ablate", "ablate_predicted",
         "ablate_flipped", "ablate_iou"),
        results,
    )
    flips = [r[4] for r in results]
    line = f"edited {len(results)} samples; flips {sum(flips)}/{len(flips)}"
    if ablate is not None:
        abl_flips = [r[10] for r in results]
        line += f"; {ablate} flips {sum(abl_flips)}/{len(abl_flips)}"
    click.echo(line)


def _edit_one_star(packed):
    return _edit_one(*packed)


@cli.command("metrics")
@_common_options
@click.option("--data", "data_dir", required=True, help="Directory from gen-data.")
@click.option("--edits", "edits_dir", required=True, help="Directory from edit.")
def cmd_metrics(config_path, seed, out, overrides, data_dir, edits_dir) -> None:
    """Score an edit directory against its dataset.

    Class membership is the best normalized cross-correlation against
    rendered shape templates (recorded per class), and structural
    fidelity is the foreground-mask IoU between the edited output and
    its source image.  Both proxies are deterministic and need no
    pretrained scorer.  Ablated outputs written by edit --ablate are
    scored alongside the fully guided ones.
    """
    cfg = _run_config(config_path, seed, overrides)
    out_path = _out_dir(out)
    data_rows = {row["index"]: row for row in _read_manifest(Path(data_dir))}
    edit_rows = _read_tsv(Path(edits_dir) / "edits.tsv")
    per_image = []
    ious, flips, abl_ious, abl_flips = [], [], [], []
    for row in edit_rows:
        src = data_rows.get(row["index"])
        if src is None:
            raise FormatError(f"edit index {row['index']} not in dataset manifest")
        index = int(row["index"])
        edited = decode_latent(load_tensor(Path(edits_dir) / f"edit_{index:03d}.rdt"))
        source = _load_sample_image(Path(data_dir), src)
        predicted = classify_shape(edited)
        flipped = predicted == cfg.target_word
        iou_input = mask_iou(edited, source)
        scores = tuple(edit_score(edited, cls) for cls in SHAPES)
        abl_path = Path(edits_dir) / f"edit_{index:03d}_ablate.rdt"
        if abl_path.exists():
            abl = decode_latent(load_tensor(abl_path))
            abl_predicted = classify_shape(abl)
            abl_flipped = abl_predicted == cfg.target_word
            abl_iou = mask_iou(abl, source)
            abl_ious.append(abl_iou)
            abl_flips.append(abl_flipped)
            tail = (abl_predicted, abl_flipped, abl_iou)
        else:
            tail = ("", "", "")
        per_image.append(
            (index, src["shape"], predicted, flipped, iou_input) + scores + tail
        )
        ious.append(iou_input)
        flips.append(flipped)
    _write_tsv(
        out_path / "metrics.tsv",
        ("index", "shape", "predicted", "flipped", "iou_input")
        + tuple(f"score_{cls}" for cls in SHAPES)
        + ("ablate_predicted", "ablate_flipped", "ablate_iou"),
        per_image,
    )
    flip_rate = sum(flips) / len(flips) if flips else 0.0
    med_iou = median(ious) if ious else 0.0
    summary_row = [len(per_image), flip_rate, med_iou]
    if abl_ious:
        summary_row += [sum(abl_flips) / len(abl_flips), median(abl_ious)]
    else:
        summary_row += ["", ""]
    _write_tsv(
        out_path / "summary.tsv",
        ("count", "flip_rate", "median_iou", "ablate_flip_rate",
         "ablate_median_iou"),
        [summary_row],
    )
    save_metric_bars(
        ["flip rate", "median IoU"], [flip_rate, med_iou], "score",
        out_path / "metrics.png",
    )
    click.echo(
        f"scored {len(per_image)} edits: flip rate {flip_rate:.3f}, "
        f"median IoU {med_iou:.3f}"
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cli.main(args=list(argv) if argv is not None else None,
                 prog_name="regenedit", standalone_mode=False)
    except ParameterError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        return 1
    except (FormatError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
