"""8-bit RGB images, deterministic directory loading, and seedable randomness.

PNG is the canonical format: written losslessly, read back bitwise. JPEG is
accepted on input only. 16-bit PNG inputs are reduced to their high byte
(truncation, not rounding) so real-world corpora stay usable.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DecodeError, EmptySetError, IoError, ValidationError

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One step of the published SplitMix64 mixing function (Steele et al.)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RandomSource:
    """Seedable, platform-independent random stream.

    Streams come from the counter-based Philox4x64-10 generator keyed by
    ``seed``; derived sources mix the seed with an index through SplitMix64.
    Equal seeds produce identical streams everywhere.
    """

    seed: int
    algorithm_id: str = "philox4x64-10"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, index: int) -> "RandomSource":
        """Independent child stream for item ``index``."""
        return RandomSource(splitmix64(self.seed ^ splitmix64(index & _MASK64)))


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 8-bit RGB raster, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = self.pixels
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3) pixel array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValidationError(f"expected uint8 pixels, got {arr.dtype}")
        arr.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __repr__(self):
        return f"Image({self.width}x{self.height})"

    def content_hash(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()


def _as_image(arr: np.ndarray) -> Image:
    return Image(np.ascontiguousarray(arr, dtype=np.uint8))


@dataclass(frozen=True)
class ImageSet:
    """Ordered, non-empty collection of images with stable per-image names."""

    images: tuple
    source_id: str
    names: tuple = field(default=())

    def __post_init__(self):
        if len(self.images) == 0:
            raise EmptySetError(f"image set {self.source_id!r} is empty")
        if not self.names:
            object.__setattr__(
                self, "names", tuple(f"{i:06d}" for i in range(len(self.images)))
            )
        if len(self.names) != len(self.images):
            raise ValidationError("names and images must have equal length")

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, i):
        return self.images[i]


def load_image(path) -> Image:
    """Decode a PNG or JPEG file to an 8-bit RGB image.

    Grayscale is replicated across channels, alpha is dropped, and 16-bit
    samples are truncated to their high byte.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im)
                if arr.dtype == np.int32:
                    # PIL 'I' mode: 16-bit grayscale widened to int32
                    arr = np.clip(arr, 0, 0xFFFF).astype(np.uint16)
                gray = (arr >> 8).astype(np.uint8)
                return _as_image(np.repeat(gray[:, :, None], 3, axis=2))
            if im.mode != "RGB":
                im = im.convert("RGB")
            return _as_image(np.asarray(im))
    except FileNotFoundError as e:
        raise IoError(f"{path}: {e.strerror or 'not found'}") from e
    except UnidentifiedImageError as e:
        raise DecodeError(f"{path}: not a decodable PNG/JPEG file") from e
    except OSError as e:
        raise DecodeError(f"{path}: {e}") from e


def save_image(img: Image, path) -> None:
    """Write ``img`` losslessly as PNG; round-trips bitwise through load_image."""
    path = Path(path)
    try:
        PILImage.fromarray(np.asarray(img.pixels)).save(path, format="PNG")
    except OSError as e:
        raise IoError(f"{path}: {e}") from e


def load_set(directory, max_images: int | None = None) -> ImageSet:
    """Load every PNG/JPEG under ``directory``, sorted lexicographically by name.

    Iteration order is a pure function of the filenames, never of filesystem
    enumeration order. Per-file failures propagate with the filename attached.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory}: not a directory")
    names = sorted(
        p.name for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if max_images is not None:
        names = names[:max_images]
    if not names:
        raise EmptySetError(f"{directory}: no PNG/JPEG files found")
    images = tuple(load_image(directory / name) for name in names)
    return ImageSet(images=images, source_id=str(directory.resolve()), names=tuple(names))
