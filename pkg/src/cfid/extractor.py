"""Multi-level feature extraction behind a three-tap contract.

Two interchangeable extractors share one output contract — three flattened
activation vectors of lengths 341,056 / 235,200 / 2,048 (MaxPool1, MaxPool2,
AvgPool):

* ``ToyExtractor`` — model-free, pure numpy, for CI and experiments that do
  not need a trained network. Deterministic sparse random projections of the
  preprocessed input.
* ``TorchScriptExtractor`` — runs an exported Inception-V3 exchange file
  (TorchScript, one "input" of shape Nx3x299x299 in [-1, 1], dict output
  with the three tap names). The file is accompanied by a sidecar JSON
  manifest recording the extractor_id (SHA-256 of the model bytes), the
  level table, and a golden activation fixture.

Flattening order is channel-major then row-major spatial (C-order on a
(C, H, W) tensor); preprocessing maps channel values v to v/127.5 - 1.
"""

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ModelIoError, NonFiniteSample, ShapeMismatch, ValidationError
from .imageset import Image


@dataclass(frozen=True)
class LevelSpec:
    name: str
    channels: int
    height: int
    width: int

    @property
    def flat_dim(self) -> int:
        return self.channels * self.height * self.width


#: The three Inception-V3 taps and their activation shapes.
INCEPTION_LEVELS = (
    LevelSpec("MaxPool1", 64, 73, 73),
    LevelSpec("MaxPool2", 192, 35, 35),
    LevelSpec("AvgPool", 2048, 1, 1),
)

INPUT_SIDE = 299


@dataclass(frozen=True)
class ExtractorSpec:
    extractor_id: str
    levels: tuple = INCEPTION_LEVELS
    input_side: int = INPUT_SIDE

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ValidationError(f"expected exactly 3 levels, got {len(self.levels)}")

    @property
    def level_names(self) -> tuple:
        return tuple(lv.name for lv in self.levels)

    @property
    def flat_dims(self) -> tuple:
        return tuple(lv.flat_dim for lv in self.levels)


@dataclass(frozen=True)
class LevelActivations:
    """One flattened activation vector for one tap."""

    level_name: str
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValidationError("activations must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteSample(f"non-finite activation at level {self.level_name}")


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W, C) array with half-pixel-center bilinear sampling.

    Output pixel (i, j) samples the input at ((i+0.5)*H/out_h - 0.5,
    (j+0.5)*W/out_w - 0.5), edge-clamped. Identity when sizes match.
    """
    h, w = pixels.shape[:2]
    src_y = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[:, None, None]
    fx = (src_x - x0)[None, :, None]
    p = pixels.astype(np.float64)
    top = p[np.ix_(y0, x0)] * (1 - fx) + p[np.ix_(y0, x1)] * fx
    bottom = p[np.ix_(y1, x0)] * (1 - fx) + p[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def preprocess(img: Image, spec: ExtractorSpec) -> np.ndarray:
    """Image -> (3, side, side) float64 tensor with values in [-1, 1]."""
    side = spec.input_side
    resized = bilinear_resize(img.pixels, side, side)
    return (resized / 127.5 - 1.0).transpose(2, 0, 1)


class ToyExtractor:
    """Deterministic model-free extractor with the real tap dimensions.

    Each level multiplies the flattened preprocessed input by a fixed sparse
    random projection (Philox-seeded, so the matrices are identical on every
    platform). Levels 1 and 2 take elementwise absolute values, mimicking
    max-pool nonnegativity; level 3 averages a wider receptive set per
    output, mimicking global average pooling. Seeds and sparsity are fixed
    constants, not configuration.
    """

    _PROJECTION_SEEDS = (1001, 1002, 1003)
    _TAPS_PER_OUTPUT = (4, 4, 64)
    _cache = {}

    def __init__(self):
        self.spec = ExtractorSpec(extractor_id="toy-v1")
        self._in_dim = 3 * self.spec.input_side**2

    def _projection(self, level_index: int) -> sparse.csr_matrix:
        key = (level_index, self._in_dim)
        if key not in self._cache:
            n_out = self.spec.levels[level_index].flat_dim
            k = self._TAPS_PER_OUTPUT[level_index]
            g = np.random.Generator(np.random.Philox(key=self._PROJECTION_SEEDS[level_index]))
            indices = g.integers(0, self._in_dim, size=n_out * k).astype(np.int32)
            data = g.standard_normal(n_out * k)
            if level_index == 2:
                data /= k
            indptr = np.arange(0, n_out * k + 1, k, dtype=np.int64)
            self._cache[key] = sparse.csr_matrix(
                (data, indices, indptr), shape=(n_out, self._in_dim)
            )
        return self._cache[key]

    def extract(self, img: Image) -> list:
        x = preprocess(img, self.spec).reshape(-1)
        out = []
        for i, level in enumerate(self.spec.levels):
            values = self._projection(i) @ x
            if i < 2:
                np.abs(values, out=values)
            out.append(LevelActivations(level.name, values))
        return out

    def iter_extract(self, images, batch: int = 8):
        for img in images:
            yield self.extract(img)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _find_manifest(model_path: Path) -> Path:
    sidecar = model_path.with_name(model_path.name + ".manifest.json")
    if sidecar.exists():
        return sidecar
    sibling = model_path.parent / "manifest.json"
    if sibling.exists():
        return sibling
    raise ModelIoError(f"{model_path}: no sidecar manifest found")


class TorchScriptExtractor:
    """Runs an exported three-tap Inception-V3 exchange file.

    Load-time validation: the model bytes must hash to the manifest's
    extractor_id, the manifest level table must equal the hardcoded
    INCEPTION_LEVELS, and a zero probe input must produce the declared
    output names and shapes. Batching is an internal optimization; outputs
    are bitwise independent of the batch size.
    """

    def __init__(self, model_path, batch: int = 8, threads: int | None = None):
        model_path = Path(model_path)
        if not model_path.is_file():
            raise ModelIoError(f"{model_path}: model file not found")
        manifest_path = _find_manifest(model_path)
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ModelIoError(f"{manifest_path}: unreadable manifest ({e})")
        file_id = _sha256_file(model_path)
        declared = manifest.get("extractor_id")
        if declared != file_id:
            raise ModelIoError(
                f"{model_path}: bytes hash to {file_id[:12]}..., manifest says "
                f"{str(declared)[:12]}..."
            )
        levels = tuple(
            LevelSpec(lv["name"], lv["channels"], lv["height"], lv["width"])
            for lv in manifest.get("levels", ())
        )
        if levels != INCEPTION_LEVELS:
            raise ShapeMismatch(
                f"{manifest_path}: level table {levels} differs from the supported "
                f"tap contract {INCEPTION_LEVELS}"
            )
        self.spec = ExtractorSpec(extractor_id=file_id)
        self.manifest = manifest
        self.batch = max(1, int(batch))
        try:
            import torch
        except ImportError as e:
            raise ModelIoError("torch is required to run exchange-format models") from e
        self._torch = torch
        if threads is None and os.environ.get("CFID_THREADS"):
            threads = int(os.environ["CFID_THREADS"])
        if threads:
            torch.set_num_threads(threads)
        try:
            self._model = torch.jit.load(str(model_path), map_location="cpu")
            self._model.eval()
        except Exception as e:
            raise ModelIoError(f"{model_path}: failed to load ({e})")
        self._probe()

    def _probe(self):
        probe = np.zeros((1, 3, self.spec.input_side, self.spec.input_side), dtype=np.float32)
        outputs = self._forward(probe)
        for level in self.spec.levels:
            if level.name not in outputs:
                raise ShapeMismatch(
                    f"model outputs {sorted(outputs)} lack tap {level.name!r}"
                )
            got = outputs[level.name].shape[1:]
            want = (level.channels, level.height, level.width)
            if tuple(got) != want:
                raise ShapeMismatch(f"tap {level.name}: model yields {tuple(got)}, expected {want}")

    def _forward(self, batch_array: np.ndarray) -> dict:
        torch = self._torch
        with torch.no_grad():
            out = self._model(torch.from_numpy(batch_array))
        return {name: tensor.numpy() for name, tensor in out.items()}

    def extract(self, img: Image) -> list:
        return next(self.iter_extract([img]))

    def iter_extract(self, images, batch: int | None = None):
        batch = batch or self.batch
        pending = []
        for img in images:
            pending.append(preprocess(img, self.spec).astype(np.float32))
            if len(pending) == batch:
                yield from self._flush(pending)
                pending = []
        if pending:
            yield from self._flush(pending)

    def _flush(self, pending: list):
        outputs = self._forward(np.stack(pending))
        for i in range(len(pending)):
            yield [
                LevelActivations(level.name, outputs[level.name][i].reshape(-1))
                for level in self.spec.levels
            ]


def load_extractor(spec_str: str, batch: int = 8, threads: int | None = None):
    """Factory used by the CLI: "toy" or a path to an exchange-format model."""
    if spec_str == "toy":
        return ToyExtractor()
    return TorchScriptExtractor(spec_str, batch=batch, threads=threads)
