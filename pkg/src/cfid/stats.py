"""Streaming, mergeable Gaussian statistics over activation vectors.

Covariances are unbiased (N-1 denominator) and always float64; activation
precision does not leak into the moments. Two representations:

* dense — a D x D covariance, maintained online (Welford co-moment), the
  default for D <= 4096;
* lowrank — the N x D factor A with rows (x_i - mean)/sqrt(N-1), so the
  implied covariance is A^T A. Mandatory for the high-dimensional taps,
  where a dense matrix would need hundreds of gigabytes.

Accumulators are single-writer; parallel ingestion merges shard-local
accumulators with the standard pairwise moment-combination identity.
"""

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    DimensionMismatch,
    FormatVersionError,
    InsufficientSamples,
    IoError,
    NonFiniteSample,
    RepresentationMismatch,
    ValidationError,
)

#: Largest dimension for which auto mode keeps a dense covariance.
DENSE_MAX_DIM = 4096

BUNDLE_FORMAT_VERSION = 1


def resolve_storage(dim: int, mode: str = "auto") -> str:
    if mode == "auto":
        return "dense" if dim <= DENSE_MAX_DIM else "lowrank"
    if mode in ("dense", "lowrank"):
        return mode
    raise ValidationError(f"unknown representation mode {mode!r}")


@dataclass(frozen=True)
class GaussianStats:
    """Finalized sample mean plus covariance in one of the two representations."""

    dim: int
    count: int
    mean: np.ndarray
    cov: np.ndarray | None = None
    factor: np.ndarray | None = None

    def __post_init__(self):
        if (self.cov is None) == (self.factor is None):
            raise ValidationError("exactly one of cov/factor must be set")
        if self.mean.shape != (self.dim,):
            raise ValidationError(f"mean shape {self.mean.shape} != ({self.dim},)")
        if self.cov is not None and self.cov.shape != (self.dim, self.dim):
            raise ValidationError(f"cov shape {self.cov.shape} != square of dim {self.dim}")
        if self.factor is not None and (
            self.factor.ndim != 2 or self.factor.shape[1] != self.dim
        ):
            raise ValidationError(f"factor shape {self.factor.shape} incompatible with dim {self.dim}")

    @property
    def representation(self) -> str:
        return "dense" if self.cov is not None else "lowrank"

    def trace(self) -> float:
        if self.cov is not None:
            return float(np.trace(self.cov))
        return float(np.sum(self.factor * self.factor))

    def implied_cov(self) -> np.ndarray:
        """Materialize the covariance; only safe at moderate dimension."""
        if self.cov is not None:
            return self.cov
        return self.factor.T @ self.factor


class StatsAccumulator:
    """Single-pass moment accumulator for one activation level.

    Dense storage keeps (count, mean, co-moment) via Welford updates;
    lowrank storage keeps the raw rows and centers them at finalize time.
    """

    def __init__(self, dim: int, storage: str = "auto"):
        if dim < 1:
            raise ValidationError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.storage = resolve_storage(dim, storage)
        if self.storage == "dense" and dim > DENSE_MAX_DIM:
            raise RepresentationMismatch(
                f"dense storage at dim {dim} needs a {dim}x{dim} co-moment matrix; "
                f"the ceiling is {DENSE_MAX_DIM}"
            )
        self.count = 0
        if self.storage == "dense":
            self._mean = np.zeros(dim)
            self._m2 = np.zeros((dim, dim))
        else:
            self._rows = []

    def add(self, sample: np.ndarray) -> "StatsAccumulator":
        sample = np.asarray(sample, dtype=np.float64).reshape(-1)
        if sample.shape[0] != self.dim:
            raise DimensionMismatch(f"sample has dim {sample.shape[0]}, accumulator {self.dim}")
        if not np.all(np.isfinite(sample)):
            raise NonFiniteSample("sample contains NaN or Inf")
        self.count += 1
        if self.storage == "dense":
            delta = sample - self._mean
            self._mean += delta / self.count
            self._m2 += np.outer(delta, sample - self._mean)
        else:
            self._rows.append(sample)
        return self

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise InsufficientSamples("no samples accumulated")
        if self.storage == "dense":
            return self._mean.copy()
        return np.mean(self._rows, axis=0)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        """New accumulator equivalent to ingesting both sample streams."""
        if self.dim != other.dim:
            raise DimensionMismatch(f"cannot merge dims {self.dim} and {other.dim}")
        if self.storage != other.storage:
            raise RepresentationMismatch(
                f"cannot merge {self.storage} with {other.storage} storage"
            )
        merged = StatsAccumulator(self.dim, self.storage)
        merged.count = self.count + other.count
        if self.storage == "lowrank":
            merged._rows = [r.copy() for r in self._rows] + [r.copy() for r in other._rows]
            return merged
        if merged.count == 0:
            return merged
        if self.count == 0 or other.count == 0:
            src = other if self.count == 0 else self
            merged._mean = src._mean.copy()
            merged._m2 = src._m2.copy()
            return merged
        # pairwise combination: M2_ab = M2_a + M2_b + outer(d, d) * na*nb/n
        delta = other._mean - self._mean
        merged._mean = self._mean + delta * (other.count / merged.count)
        merged._m2 = (
            self._m2
            + other._m2
            + np.outer(delta, delta) * (self.count * other.count / merged.count)
        )
        return merged

    def finalize(self, mode: str = "auto") -> GaussianStats:
        """Freeze into GaussianStats; unbiased covariance, N >= 2 required."""
        if self.count < 2:
            raise InsufficientSamples(f"need >= 2 samples, have {self.count}")
        representation = resolve_storage(self.dim, mode)
        if representation == "dense":
            if self.storage == "dense":
                cov = self._m2 / (self.count - 1)
                cov = (cov + cov.T) / 2.0
            elif self.dim <= DENSE_MAX_DIM:
                factor = self._centered_factor()
                cov = factor.T @ factor
            else:
                raise RepresentationMismatch(
                    f"dense covariance at dim {self.dim} exceeds the {DENSE_MAX_DIM} "
                    "ceiling; use lowrank"
                )
            return GaussianStats(self.dim, self.count, self.mean, cov=cov)
        if self.storage == "dense":
            raise RepresentationMismatch(
                "lowrank output requires row storage; accumulator is dense"
            )
        return GaussianStats(self.dim, self.count, self.mean, factor=self._centered_factor())

    def _centered_factor(self) -> np.ndarray:
        rows = np.asarray(self._rows)
        return (rows - rows.mean(axis=0)) / np.sqrt(self.count - 1)


@dataclass(frozen=True)
class StatsBundle:
    """Per-level statistics of one image set under one extractor."""

    extractor_id: str
    levels: tuple  # of (level_name, GaussianStats), in tap order
    source_id: str
    created_at: str = ""

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ValidationError(f"bundle must have exactly 3 levels, got {len(self.levels)}")
        if not self.created_at:
            object.__setattr__(
                self, "created_at", datetime.now(timezone.utc).isoformat(timespec="seconds")
            )

    @property
    def level_names(self) -> tuple:
        return tuple(name for name, _ in self.levels)

    @property
    def count(self) -> int:
        return self.levels[0][1].count

    def stats_for(self, name: str) -> GaussianStats:
        for level_name, stats in self.levels:
            if level_name == name:
                return stats
        raise ValidationError(f"bundle has no level {name!r}")


def _array_bytes(arr: np.ndarray) -> bytes:
    # contract: little-endian float64, row-major, no header
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_bundle(bundle: StatsBundle, directory) -> None:
    """Persist a bundle as manifest.json plus raw little-endian float64 arrays.

    The byte layout is part of the public contract: load(save(b)) reproduces
    every array bitwise, and each array file carries a SHA-256 in the
    manifest so tampering is detected at load time.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"{directory}: {e}")
    levels_meta = []
    for name, stats in bundle.levels:
        arrays = {"mean": stats.mean}
        if stats.representation == "dense":
            arrays["cov"] = stats.cov
        else:
            arrays["factor"] = stats.factor
        array_meta = {}
        for kind, arr in arrays.items():
            data = _array_bytes(arr)
            filename = f"{name}.{kind}.f64"
            try:
                (directory / filename).write_bytes(data)
            except OSError as e:
                raise IoError(f"{directory / filename}: {e}")
            array_meta[kind] = {
                "file": filename,
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        levels_meta.append(
            {
                "name": name,
                "dim": stats.dim,
                "count": stats.count,
                "representation": stats.representation,
                "arrays": array_meta,
            }
        )
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "extractor_id": bundle.extractor_id,
        "source_id": bundle.source_id,
        "created_at": bundle.created_at,
        "levels": levels_meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_array(directory: Path, meta: dict, shape: tuple) -> np.ndarray:
    path = directory / meta["file"]
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoError(f"{path}: {e}")
    if hashlib.sha256(data).hexdigest() != meta["sha256"]:
        raise ChecksumError(f"{path}: array bytes do not match recorded SHA-256")
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise ChecksumError(f"{path}: got {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    arr.setflags(write=False)
    return arr


def load_bundle(directory) -> StatsBundle:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as e:
        raise IoError(f"{manifest_path}: {e}")
    except json.JSONDecodeError as e:
        raise ChecksumError(f"{manifest_path}: invalid JSON ({e})")
    version = manifest.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise FormatVersionError(
            f"{manifest_path}: format_version {version!r}, supported: {BUNDLE_FORMAT_VERSION}"
        )
    levels = []
    for meta in manifest["levels"]:
        dim, count = meta["dim"], meta["count"]
        mean = _load_array(directory, meta["arrays"]["mean"], (dim,))
        if meta["representation"] == "dense":
            cov = _load_array(directory, meta["arrays"]["cov"], (dim, dim))
            stats = GaussianStats(dim, count, mean, cov=cov)
        else:
            factor = _load_array(directory, meta["arrays"]["factor"], (count, dim))
            stats = GaussianStats(dim, count, mean, factor=factor)
        levels.append((meta["name"], stats))
    return StatsBundle(
        extractor_id=manifest["extractor_id"],
        levels=tuple(levels),
        source_id=manifest["source_id"],
        created_at=manifest["created_at"],
    )


def is_bundle_dir(path) -> bool:
    """A directory is a bundle iff it holds a manifest.json with our version key."""
    path = Path(path)
    manifest = path / "manifest.json"
    if not manifest.is_file():
        return False
    try:
        return "format_version" in json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError):
        return False
