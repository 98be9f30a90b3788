import numpy as np
import pytest

from cfid.imageset import Image, ImageSet, save_image


def synthetic_photo_image(seed: int, side: int = 64) -> Image:
    """Smooth random field with texture: a stand-in for photographic content."""
    g = np.random.Generator(np.random.Philox(key=seed))
    yy, xx = np.meshgrid(np.linspace(0, 1, side), np.linspace(0, 1, side), indexing="ij")
    channels = []
    for _ in range(3):
        field = np.zeros((side, side))
        for _ in range(4):
            fx, fy = g.uniform(0.5, 4.0, size=2)
            phase = g.uniform(0, 2 * np.pi, size=2)
            field += g.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fx * xx + phase[0])) * np.cos(
                2 * np.pi * (fy * yy + phase[1])
            )
        field += 0.15 * g.standard_normal((side, side))
        lo, hi = field.min(), field.max()
        channels.append((field - lo) / (hi - lo) * 255.0)
    return Image(np.stack(channels, axis=2).astype(np.uint8))


def synthetic_photo_set(n: int, side: int = 64, seed: int = 7, source_id: str = "synthetic") -> ImageSet:
    images = tuple(synthetic_photo_image(seed * 1000 + i, side) for i in range(n))
    return ImageSet(images=images, source_id=source_id)


def write_image_dir(path, image_set: ImageSet):
    path.mkdir(parents=True, exist_ok=True)
    for name, img in zip(image_set.names, image_set):
        save_image(img, path / f"{name}.png")
    return path


@pytest.fixture
def small_set():
    return synthetic_photo_set(6, side=32, seed=11)


@pytest.fixture
def image_dir(tmp_path, small_set):
    return write_image_dir(tmp_path / "images", small_set)
