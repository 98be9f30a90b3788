"""Command-line surface: extract, score, distort, sweep.

Exit codes are a stable scripting contract: 0 success, 2 I/O or model
errors, 3 compatibility errors, 4 validation errors. Failures print one
machine-parsable line to stderr: ``error: <ErrorClass>: <detail>``.

Flags beat environment variables (CFID_MODEL, CFID_THREADS) beat defaults.
"""

import functools
import json
import os
import sys
from pathlib import Path

import click

from .compound import compute_bundle, score_sets
from .distortions import KINDS, DEFAULT_GRIDS, DistortionSpec, distort_set
from .errors import CfidError, ValidationError
from .extractor import load_extractor
from .imageset import ImageSet, RandomSource, load_set, save_image
from .stats import is_bundle_dir, load_bundle, resolve_storage, save_bundle

DEFAULT_LOWRANK_CAP = 2048


def _fail(error: Exception, code: int) -> None:
    click.echo(f"error: {type(error).__name__}: {error}", err=True)
    sys.exit(code)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CfidError as e:
            _fail(e, e.exit_code)
        except OSError as e:
            _fail(e, 2)

    return wrapper


def _get_extractor(spec_str, batch=8):
    spec_str = spec_str or os.environ.get("CFID_MODEL")
    if not spec_str:
        raise ValidationError("no extractor given: pass --extractor toy|MODEL_PATH or set CFID_MODEL")
    threads = int(os.environ["CFID_THREADS"]) if os.environ.get("CFID_THREADS") else None
    return load_extractor(spec_str, batch=batch, threads=threads)


def _parse_alphas(text):
    try:
        alphas = tuple(float(a) for a in text.split(","))
    except ValueError:
        raise ValidationError(f"cannot parse alpha list {text!r}")
    if not alphas:
        raise ValidationError("alpha list is empty")
    return alphas


def _check_kind(kind):
    if kind not in KINDS:
        raise ValidationError(f"unknown distortion kind {kind!r}; expected one of {KINDS}")


@click.group()
def main():
    """Compound Fréchet Inception Distance toolkit."""


@main.command("extract")
@click.argument("images_dir", type=click.Path())
@click.argument("out_bundle_dir", type=click.Path())
@click.option("--extractor", "extractor_str", default=None, help="'toy' or model file path.")
@click.option("--batch", default=8, show_default=True, help="Inference batch size.")
@click.option("--max-samples", type=int, default=None, help="Use only the first N images.")
@click.option("--mode", default="auto", show_default=True, help="auto|dense|lowrank.")
@click.option(
    "--lowrank-cap",
    default=DEFAULT_LOWRANK_CAP,
    show_default=True,
    help="Sample cap when any level stores a lowrank factor (bundle size is N x D).",
)
@cli_errors
def cmd_extract(images_dir, out_bundle_dir, extractor_str, batch, max_samples, mode, lowrank_cap):
    """Extract features from IMAGES_DIR and write a stats bundle."""
    extractor = _get_extractor(extractor_str, batch=batch)
    limit = max_samples
    if any(resolve_storage(lv.flat_dim, mode) == "lowrank" for lv in extractor.spec.levels):
        limit = min(limit, lowrank_cap) if limit else lowrank_cap
    images = load_set(images_dir, max_images=limit)
    bundle = compute_bundle(images, extractor, mode=mode, batch=batch)
    save_bundle(bundle, out_bundle_dir)
    for name, stats in bundle.levels:
        click.echo(f"{name}: dim={stats.dim} representation={stats.representation}")
    click.echo(f"samples={bundle.count} extractor={bundle.extractor_id}")


def _load_side(path):
    path = Path(path)
    if is_bundle_dir(path):
        return load_bundle(path)
    return load_set(path)


@main.command("score")
@click.argument("side_a", type=click.Path())
@click.argument("side_b", type=click.Path())
@click.option("--extractor", "extractor_str", default=None, help="'toy' or model file path.")
@click.option("--out", "-o", "out_json", type=click.Path(), default=None, help="Report JSON path.")
@click.option("--batch", default=8, show_default=True)
@click.option("--scale-mode", default="full_score", show_default=True,
              help="full_score|covariance_only normalization.")
@cli_errors
def cmd_score(side_a, side_b, extractor_str, out_json, batch, scale_mode):
    """Score two sides (image directories or stats bundles) against each other."""
    a = _load_side(side_a)
    b = _load_side(side_b)
    extractor = None
    if isinstance(a, ImageSet) or isinstance(b, ImageSet):
        extractor = _get_extractor(extractor_str, batch=batch)
    report = score_sets(a, b, extractor, scale_mode=scale_mode, batch=batch)
    if out_json:
        Path(out_json).write_text(report.to_json())
    click.echo(f"cfid_max={report.cfid_max!r} argmax_level={report.argmax_level}")


@main.command("distort")
@click.argument("images_dir", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--kind", required=True, help="|".join(KINDS))
@click.option("--alpha", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rho", type=float, default=25.0, show_default=True, help="Swirl radius in pixels.")
@cli_errors
def cmd_distort(images_dir, out_dir, kind, alpha, seed, rho):
    """Write a distorted PNG copy of IMAGES_DIR into OUT_DIR (same names)."""
    _check_kind(kind)
    spec = DistortionSpec(kind=kind, alpha=alpha, rho=rho, seed=seed)
    images = load_set(images_dir)
    distorted = distort_set(images, spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in zip(distorted.names, distorted):
        save_image(img, out_dir / (Path(name).stem + ".png"))
    click.echo(f"wrote {len(distorted)} images to {out_dir}")


@main.command("sweep")
@click.argument("images_dir", type=click.Path())
@click.option("--kind", required=True, help="|".join(KINDS))
@click.option("--extractor", "extractor_str", default=None, help="'toy' or model file path.")
@click.option("--out", "-o", "out_csv", type=click.Path(), required=True, help="CSV output path.")
@click.option("--alphas", default=None, help="Comma-separated grid; defaults to the kind's built-in grid.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rho", type=float, default=25.0, show_default=True)
@click.option("--batch", default=8, show_default=True)
@click.option("--baseline", type=click.Path(), default=None,
              help="Separate clean baseline directory (default: IMAGES_DIR itself).")
@click.option("--reuse-noise", is_flag=True,
              help="Reuse one noise raster per image across all alpha levels "
                   "instead of drawing a fresh one per level.")
@cli_errors
def cmd_sweep(images_dir, kind, extractor_str, out_csv, alphas, seed, rho, batch,
              baseline, reuse_noise):
    """Distort, extract, and score one alpha grid against the clean baseline.

    Rows are flushed to the CSV (and its JSON twin) as they finish, so long
    sweeps are resumable by inspection.
    """
    _check_kind(kind)
    grid = _parse_alphas(alphas) if alphas else DEFAULT_GRIDS[kind].alphas
    extractor = _get_extractor(extractor_str, batch=batch)
    images = load_set(images_dir)
    baseline_images = load_set(baseline) if baseline else images
    baseline_bundle = compute_bundle(baseline_images, extractor, batch=batch)

    out_csv = Path(out_csv)
    out_json = out_csv.with_suffix(".json")
    rows = []
    with open(out_csv, "w", encoding="utf-8", newline="\n") as csv_file:
        csv_file.write("alpha,cfid1,cfid2,cfid3,cfid_max,argmax\n")
        csv_file.flush()
        for index, alpha in enumerate(grid):
            level_seed = seed if reuse_noise else RandomSource(seed).derive(index).seed
            spec = DistortionSpec(kind=kind, alpha=alpha, rho=rho, seed=level_seed)
            distorted = distort_set(images, spec)
            report = score_sets(baseline_bundle, distorted, extractor, batch=batch)
            scores = [level.normalized for level in report.levels]
            row = {
                "alpha": alpha,
                "cfid1": scores[0],
                "cfid2": scores[1],
                "cfid3": scores[2],
                "cfid_max": report.cfid_max,
                "argmax_level": report.argmax_level,
            }
            rows.append(row)
            csv_file.write(
                f"{alpha!r},{scores[0]!r},{scores[1]!r},{scores[2]!r},"
                f"{report.cfid_max!r},{report.argmax_level}\n"
            )
            csv_file.flush()
            _write_sweep_json(out_json, kind, baseline_bundle, rows)
            click.echo(f"alpha={alpha:g} cfid_max={report.cfid_max:.6g} argmax={report.argmax_level}")
    click.echo(f"wrote {out_csv} and {out_json}")


def _write_sweep_json(path, kind, baseline_bundle, rows):
    payload = {
        "kind": kind,
        "baseline_source": baseline_bundle.source_id,
        "extractor_id": baseline_bundle.extractor_id,
        "rows": rows,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")


if __name__ == "__main__":
    main()
