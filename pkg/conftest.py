"""
Shared pytest fixtures: deterministic synthetic images, masks and datasets.

Images are smooth random color fields with mild texture, which behave like
natural photos for the filter bank, and dead-leaves images built from
occluding disks. Class scenes are Voronoi partitions
with one shaded base color per class, paired with their ground-truth masks.
"""

from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest
from PIL import Image

from src.core import ImageRaster, SegMask, write_image, write_mask

CLASS_COLORS = np.array([
    [200, 60, 50],
    [60, 170, 70],
    [50, 80, 200],
    [220, 200, 80],
], dtype=np.float64)


def smooth_image(rng: np.random.Generator, size: int = 48, coarse: int = 6, noise: float = 6.0) -> ImageRaster:
    """Bicubic upsampling of a coarse random grid plus Gaussian texture."""
    grid = rng.integers(0, 256, size=(coarse, coarse, 3), dtype=np.uint8)
    field = np.asarray(Image.fromarray(grid).resize((size, size), resample=Image.BICUBIC), dtype=np.float64)
    field += rng.normal(0.0, noise, size=field.shape)
    return ImageRaster(np.rint(np.clip(field, 0, 255)).astype(np.uint8))


def dead_leaves_image(rng: np.random.Generator, size: int = 48, n_leaves: int = 150,
                      r_min: float = 1.5, r_max: float = 24.0) -> ImageRaster:
    """
    Occluding shaded disks with radius density proportional to r^-3.

    This occlusion model has the scale invariance, sharp object edges and
    roughly 1/f amplitude spectrum of natural photographs.
    """
    u = rng.random(n_leaves)
    radii = (r_min ** -2 - u * (r_min ** -2 - r_max ** -2)) ** -0.5
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)

    pixels = np.empty((size, size, 3))
    pixels[:] = rng.uniform(0, 256, size=3)
    for radius in radii:
        cy, cx = rng.uniform(0, size, size=2)
        inside = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2
        tilt = rng.normal(0.0, 20.0, size=2)
        shade = rng.uniform(0, 256, size=3) + ((tilt[0] * (rows - cy) + tilt[1] * (cols - cx)) / size)[..., None]
        pixels[inside] = shade[inside]
    pixels += rng.normal(0.0, 3.0, size=pixels.shape)
    return ImageRaster(np.rint(np.clip(pixels, 0, 255)).astype(np.uint8))


def class_scene(rng: np.random.Generator, size: int = 64, n_sites: int = 6,
                num_classes: int = 4) -> Tuple[ImageRaster, SegMask]:
    """Voronoi scene: every cell takes a class color with a soft shading ramp."""
    sites = rng.uniform(0, size, size=(n_sites, 2))
    site_class = rng.integers(0, num_classes, size=n_sites)
    rows, cols = np.mgrid[0:size, 0:size]
    distance = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
    labels = site_class[np.argmin(distance, axis=-1)].astype(np.uint8)

    shading = 0.85 + 0.3 * (rows + cols)[..., None] / (2.0 * size)
    pixels = CLASS_COLORS[labels] * shading + rng.normal(0.0, 4.0, size=(size, size, 3))
    image = ImageRaster(np.rint(np.clip(pixels, 0, 255)).astype(np.uint8))
    return image, SegMask(labels, num_classes)


def write_images(root: Path, images: List[ImageRaster], prefix: str = 'img') -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        write_image(image, root / f"{prefix}{i:03d}.png")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_images(rng) -> List[ImageRaster]:
    return [smooth_image(rng, size=24, coarse=4) for _ in range(6)]


@pytest.fixture
def source_dir(tmp_path) -> Path:
    generator = np.random.default_rng(1)
    return write_images(tmp_path / 'source', [smooth_image(generator, size=24, coarse=4) for _ in range(6)])


@pytest.fixture
def target_dir(tmp_path) -> Path:
    generator = np.random.default_rng(2)
    return write_images(tmp_path / 'target', [smooth_image(generator, size=24, coarse=5) for _ in range(5)])


@pytest.fixture
def mask_dirs(tmp_path) -> Tuple[Path, Path]:
    """Ground-truth masks and a noisy copy as predictions."""
    generator = np.random.default_rng(3)
    gt_root, pred_root = tmp_path / 'gt', tmp_path / 'pred'
    for i in range(4):
        _, mask = class_scene(generator, size=32)
        labels = np.array(mask.labels)
        labels[:2, :] = 255
        write_mask(SegMask(labels, 4), gt_root / f"m{i}.png")
        noisy = np.array(mask.labels)
        flip = generator.random(noisy.shape) < 0.1
        noisy[flip] = generator.integers(0, 4, size=int(flip.sum()))
        write_mask(SegMask(noisy, 4), pred_root / f"m{i}.png")
    return gt_root, pred_root


@pytest.fixture(scope='session')
def natural_dataset(tmp_path_factory) -> Path:
    """50 natural-like 48×48 images."""
    generator = np.random.default_rng(2024)
    root = tmp_path_factory.mktemp('natural')
    return write_images(root, [smooth_image(generator, size=48, coarse=8) for _ in range(50)])


@pytest.fixture(scope='session')
def dead_leaves_dataset(tmp_path_factory) -> Path:
    """50 dead-leaves 48×48 images."""
    generator = np.random.default_rng(2025)
    root = tmp_path_factory.mktemp('leaves')
    return write_images(root, [dead_leaves_image(generator) for _ in range(50)])


@pytest.fixture(scope='session')
def class_scenes() -> List[Tuple[ImageRaster, SegMask]]:
    generator = np.random.default_rng(77)
    return [class_scene(generator) for _ in range(12)]
