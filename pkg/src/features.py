"""
Channel-mean activation features.

A seeded two-layer rectified filter bank stands in for the feature extraction
module of a segmentation network. Each image is reduced to the vector of its
per-channel spatial means; a dataset becomes a ChannelMeanMatrix.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from src.core import (
    ChannelMeanMatrix,
    DatasetHandle,
    DatasetKind,
    ImageRaster,
    parallel_map,
    read_image,
)
from src.errors import DatasetError, DomainShiftError, ValidationError

logger = logging.getLogger(__name__)

INPUT_CHANNELS = 3


@dataclass(frozen=True)
class FilterBankConfig:
    """Architecture of the built-in extractor."""

    layers: int = 2
    channels: Tuple[int, ...] = (32, 64)
    kernel_size: int = 3
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))
        if self.layers < 1:
            raise ValidationError(f"filter bank needs at least one layer, got {self.layers}")
        if len(self.channels) != self.layers:
            raise ValidationError(
                f"{self.layers} layers need {self.layers} channel counts, got {list(self.channels)}"
            )
        if any(c < 1 for c in self.channels):
            raise ValidationError(f"every layer needs at least one channel, got {list(self.channels)}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.stride < 1:
            raise ValidationError(f"stride must be at least 1, got {self.stride}")


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Immutable stack of convolution kernels, each shaped (out, in, k, k)."""

    kernels: Tuple[np.ndarray, ...]
    stride: int = 2
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.kernels:
            raise ValidationError("filter bank has no layers")
        frozen = []
        in_channels = INPUT_CHANNELS
        for index, kernel in enumerate(self.kernels):
            kernel = np.array(kernel, dtype=np.float64)
            if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
                raise ValidationError(f"layer {index} kernel must be (out, in, k, k), got {kernel.shape}")
            if kernel.shape[0] < 1:
                raise ValidationError(f"layer {index} has zero channels")
            if kernel.shape[2] % 2 == 0:
                raise ValidationError(f"layer {index} kernel size {kernel.shape[2]} is even")
            if kernel.shape[1] != in_channels:
                raise ValidationError(
                    f"layer {index} expects {kernel.shape[1]} input channels, previous layer gives {in_channels}"
                )
            kernel.setflags(write=False)
            frozen.append(kernel)
            in_channels = kernel.shape[0]
        if self.stride < 1:
            raise ValidationError(f"stride must be at least 1, got {self.stride}")
        object.__setattr__(self, 'kernels', tuple(frozen))

    @property
    def n_channels(self) -> int:
        return self.kernels[-1].shape[0]

    def checksum(self) -> str:
        """SHA-256 over stride and kernel bytes."""
        digest = hashlib.sha256(str(self.stride).encode('ascii'))
        for kernel in self.kernels:
            digest.update(str(kernel.shape).encode('ascii'))
            digest.update(kernel.astype('<f8').tobytes())
        return digest.hexdigest()

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial size of the last activation for an input of height×width."""
        for index, kernel in enumerate(self.kernels):
            k = kernel.shape[2]
            if height < k or width < k:
                raise ValidationError(
                    f"image smaller than receptive field: layer {index} needs {k}×{k}, got {height}×{width}"
                )
            height = (height - k) // self.stride + 1
            width = (width - k) // self.stride + 1
        return height, width

    def describe(self) -> str:
        channels = ','.join(str(kernel.shape[0]) for kernel in self.kernels)
        return (
            f"seed={self.seed} channels={channels} kernel={self.kernels[0].shape[2]} "
            f"stride={self.stride} sha256={self.checksum()[:16]}"
        )


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """C×h×w non-negative activations."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValidationError(f"feature map must be C×h×w, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature map contains non-finite values")
        if np.any(values < 0):
            raise ValidationError("feature map contains negative activations")
        object.__setattr__(self, 'values', values)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def _uniform_weights(seed: int, count: int, bound: float) -> np.ndarray:
    """
    Draw `count` weights uniform in [-bound, bound].

    Uses the raw 64-bit output of NumPy's PCG64 bit generator, whose stream
    for a given seed is fixed across platforms and releases; the top 53 bits
    of each word become a double in [0, 1).
    """
    raw = np.random.PCG64(seed).random_raw(count)
    unit = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return (2.0 * unit - 1.0) * bound


def build_filter_bank(seed: int, config: Optional[FilterBankConfig] = None) -> FilterBank:
    """
    Build the deterministic default extractor.

    Kernels are drawn layer by layer, in (out, in, row, col) order, from one
    stream seeded with `seed`; weights are uniform in [-1/k², 1/k²].
    """
    config = config or FilterBankConfig()
    if seed < 0 or seed >= 2 ** 64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")

    k = config.kernel_size
    shapes = []
    in_channels = INPUT_CHANNELS
    for out_channels in config.channels:
        shapes.append((out_channels, in_channels, k, k))
        in_channels = out_channels

    weights = _uniform_weights(seed, sum(int(np.prod(shape)) for shape in shapes), 1.0 / (k * k))
    kernels = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        kernels.append(weights[offset:offset + size].reshape(shape))
        offset += size

    return FilterBank(kernels=tuple(kernels), stride=config.stride, seed=seed)


def _correlate(x: np.ndarray, weights: np.ndarray, stride: int) -> np.ndarray:
    """Valid-region strided cross-correlation of a C×H×W array."""
    out_channels, _, k, _ = weights.shape
    _, height, width = x.shape
    h = (height - k) // stride + 1
    w = (width - k) // stride + 1

    out = np.zeros((out_channels, h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            patch = x[:, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride]
            out += np.einsum('oc,chw->ohw', weights[:, :, i, j], patch)
    return out


def extract(bank: FilterBank, image: ImageRaster) -> FeatureMap:
    """Run the filter bank on one image; returns the last layer's rectified activation."""
    bank.output_shape(image.height, image.width)

    x = np.asarray(image.pixels, dtype=np.float64).transpose(2, 0, 1) / 255.0
    for kernel in bank.kernels:
        x = np.maximum(_correlate(x, kernel, bank.stride), 0.0)
    return FeatureMap(x)


def channel_means(feature_map: FeatureMap) -> np.ndarray:
    """Spatial mean of every channel, accumulated in float64."""
    return feature_map.values.mean(axis=(1, 2), dtype=np.float64)


def dataset_channel_means(bank: FilterBank, dataset: DatasetHandle, jobs: int = 1) -> ChannelMeanMatrix:
    """
    Channel means of every image in a dataset.

    Row i belongs to dataset.entries[i] regardless of worker scheduling.
    """
    if dataset.kind != DatasetKind.IMAGES:
        raise ValidationError(f"dataset {dataset.root} holds {dataset.kind.value}, not images")

    def _row(stem: str) -> np.ndarray:
        try:
            return channel_means(extract(bank, read_image(dataset.path_of(stem))))
        except (DomainShiftError, OSError) as e:
            raise DatasetError(f"{stem}: {e}") from e

    logger.info(f"Extracting features for {len(dataset)} images from {dataset.root}")
    rows = parallel_map(_row, dataset.entries, jobs)
    tag = f"builtin root={dataset.root} {bank.describe()}"
    return ChannelMeanMatrix(np.vstack(rows).astype(np.float32), tag)


def bank_from_settings(seed: int, layers: int, channels: Sequence[int], kernel_size: int = 3,
                       stride: int = 2) -> FilterBank:
    """Convenience wrapper used by the CLI."""
    config = FilterBankConfig(layers=layers, channels=tuple(channels), kernel_size=kernel_size, stride=stride)
    return build_filter_bank(seed, config)
