"""Compound scoring: per-level Fréchet distances, normalization, max rule.

Per-level scores are normalized onto the AvgPool scale with the factor
2048/flat_dim, so the AvgPool score is the plain Fréchet Inception Distance
(scale exactly 1) and the high-dimensional taps are shrunk by their feature
ratio. The default applies the factor to the whole score; an alternative
mode scales only the covariance terms, leaving the mean term untouched, for
fidelity experiments. The compound value is the maximum of the three
normalized scores, ties broken toward the most abstract level.
"""

import json
from dataclasses import dataclass

from .errors import DimensionMismatch, ExtractorMismatch, ValidationError, WrongLevelCount
from .extractor import ExtractorSpec
from .frechet import FrechetBreakdown, frechet
from .imageset import ImageSet
from .stats import GaussianStats, StatsAccumulator, StatsBundle

#: Feature count of the reference (AvgPool) level; the normalization anchor.
REFERENCE_DIM = 2048

SCALE_MODES = ("full_score", "covariance_only")


@dataclass(frozen=True)
class LevelScore:
    level_name: str
    flat_dim: int
    raw: float
    scale: float
    normalized: float
    breakdown: FrechetBreakdown

    def as_dict(self) -> dict:
        return {
            "level_name": self.level_name,
            "flat_dim": self.flat_dim,
            "raw": self.raw,
            "scale": self.scale,
            "normalized": self.normalized,
            "breakdown": self.breakdown.as_dict(),
        }


@dataclass(frozen=True)
class CfidReport:
    extractor_id: str
    levels: tuple  # of LevelScore, in tap order
    cfid_max: float
    argmax_level: str
    sample_counts: tuple

    def as_dict(self) -> dict:
        return {
            "extractor_id": self.extractor_id,
            "levels": [score.as_dict() for score in self.levels],
            "cfid_max": self.cfid_max,
            "argmax_level": self.argmax_level,
            "sample_counts": list(self.sample_counts),
        }

    def to_json(self) -> str:
        # json emits shortest round-trip floats: >= 15 significant digits
        return json.dumps(self.as_dict(), indent=2) + "\n"


def cfid_level(
    r: GaussianStats,
    g: GaussianStats,
    flat_dim: int,
    level_name: str = "",
    scale_mode: str = "full_score",
) -> LevelScore:
    """Fréchet distance at one tap plus its feature-ratio normalization."""
    if scale_mode not in SCALE_MODES:
        raise ValidationError(f"unknown scale_mode {scale_mode!r}; expected one of {SCALE_MODES}")
    if r.dim != flat_dim or g.dim != flat_dim:
        raise DimensionMismatch(
            f"level {level_name or '?'}: stats dims ({r.dim}, {g.dim}) != flat_dim {flat_dim}"
        )
    breakdown = frechet(r, g)
    scale = REFERENCE_DIM / flat_dim
    if scale_mode == "full_score":
        normalized = scale * breakdown.total
    else:
        covariance_part = breakdown.trace_r + breakdown.trace_g - 2.0 * breakdown.cross_term
        normalized = max(0.0, breakdown.mean_term + scale * covariance_part)
    return LevelScore(
        level_name=level_name,
        flat_dim=flat_dim,
        raw=breakdown.total,
        scale=scale,
        normalized=normalized,
        breakdown=breakdown,
    )


def cfid_compose(levels, extractor_id: str = "", sample_counts: tuple = (0, 0)) -> CfidReport:
    """Reduce exactly three level scores to the compound report.

    The compound value is the max of the normalized scores; ties go to the
    later (more abstract) level.
    """
    levels = tuple(levels)
    if len(levels) != 3:
        raise WrongLevelCount(f"expected 3 level scores, got {len(levels)}")
    best = levels[0]
    for score in levels[1:]:
        if score.normalized >= best.normalized:
            best = score
    return CfidReport(
        extractor_id=extractor_id,
        levels=levels,
        cfid_max=best.normalized,
        argmax_level=best.level_name,
        sample_counts=tuple(sample_counts),
    )


def compute_bundle(
    image_set: ImageSet,
    extractor,
    mode: str = "auto",
    max_samples: int | None = None,
    batch: int = 8,
) -> StatsBundle:
    """Extract every image and accumulate per-level statistics."""
    spec: ExtractorSpec = extractor.spec
    accumulators = [StatsAccumulator(lv.flat_dim, mode) for lv in spec.levels]
    images = list(image_set)[: max_samples if max_samples else None]
    for activations in extractor.iter_extract(images, batch=batch):
        for acc, act in zip(accumulators, activations):
            acc.add(act.values)
    levels = tuple(
        (lv.name, acc.finalize(mode)) for lv, acc in zip(spec.levels, accumulators)
    )
    return StatsBundle(
        extractor_id=spec.extractor_id, levels=levels, source_id=image_set.source_id
    )


def _resolve_side(side, extractor, mode, batch) -> StatsBundle:
    if isinstance(side, StatsBundle):
        return side
    if isinstance(side, ImageSet):
        if extractor is None:
            raise ValidationError("an extractor is required to score raw image sets")
        return compute_bundle(side, extractor, mode=mode, batch=batch)
    raise ValidationError(f"expected ImageSet or StatsBundle, got {type(side).__name__}")


def score_sets(
    real,
    gen,
    extractor=None,
    mode: str = "auto",
    scale_mode: str = "full_score",
    batch: int = 8,
) -> CfidReport:
    """End-to-end: extract (unless given bundles), fit Gaussians, score.

    Both sides must come from the same extractor; mismatched ids are a hard
    error naming both.
    """
    bundle_r = _resolve_side(real, extractor, mode, batch)
    bundle_g = _resolve_side(gen, extractor, mode, batch)
    ids = {bundle_r.extractor_id, bundle_g.extractor_id}
    if extractor is not None:
        ids.add(extractor.spec.extractor_id)
    if len(ids) > 1:
        raise ExtractorMismatch(
            "sides come from different extractors: "
            + " vs ".join(sorted(i[:16] + ("..." if len(i) > 16 else "") for i in ids))
        )
    if bundle_r.level_names != bundle_g.level_names:
        raise ExtractorMismatch(
            f"level names differ: {bundle_r.level_names} vs {bundle_g.level_names}"
        )
    scores = []
    for (name, stats_r), (_, stats_g) in zip(bundle_r.levels, bundle_g.levels):
        scores.append(
            cfid_level(stats_r, stats_g, stats_r.dim, level_name=name, scale_mode=scale_mode)
        )
    return cfid_compose(
        scores,
        extractor_id=bundle_r.extractor_id,
        sample_counts=(bundle_r.count, bundle_g.count),
    )
