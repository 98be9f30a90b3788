"""Compound Fréchet Inception Distance: multi-level FID and distortion sweeps."""

from .compound import (
    CfidReport,
    LevelScore,
    cfid_compose,
    cfid_level,
    compute_bundle,
    score_sets,
)
from .distortions import (
    DEFAULT_GRIDS,
    DistortionSpec,
    SweepGrid,
    distort_set,
    gaussian_blur,
    gaussian_noise,
    salt_pepper,
    spiral_warp,
    swirl_source_coords,
)
from .extractor import (
    INCEPTION_LEVELS,
    ExtractorSpec,
    LevelActivations,
    LevelSpec,
    ToyExtractor,
    TorchScriptExtractor,
    load_extractor,
    preprocess,
)
from .frechet import FrechetBreakdown, frechet, frechet_dense, frechet_lowrank
from .imageset import Image, ImageSet, RandomSource, load_image, load_set, save_image
from .stats import (
    GaussianStats,
    StatsAccumulator,
    StatsBundle,
    load_bundle,
    save_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "CfidReport",
    "DistortionSpec",
    "ExtractorSpec",
    "FrechetBreakdown",
    "GaussianStats",
    "INCEPTION_LEVELS",
    "Image",
    "ImageSet",
    "LevelActivations",
    "LevelScore",
    "LevelSpec",
    "DEFAULT_GRIDS",
    "RandomSource",
    "StatsAccumulator",
    "StatsBundle",
    "SweepGrid",
    "ToyExtractor",
    "TorchScriptExtractor",
    "cfid_compose",
    "cfid_level",
    "compute_bundle",
    "distort_set",
    "frechet",
    "frechet_dense",
    "frechet_lowrank",
    "gaussian_blur",
    "gaussian_noise",
    "load_bundle",
    "load_extractor",
    "load_image",
    "load_set",
    "preprocess",
    "salt_pepper",
    "save_bundle",
    "save_image",
    "score_sets",
    "spiral_warp",
    "swirl_source_coords",
]
