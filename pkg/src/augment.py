"""
Target-domain augmentation operators used to manufacture different domain
shifts: low-frequency Fourier amplitude exchange, color augmentation, and the
frosted glass / poster / mural filters.

Every operator is a pure function of (image, reference image, parameters,
seed). Floats meet bytes through clamping to [0, 255] and round-half-to-even.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from src.core import (
    DatasetHandle,
    DatasetKind,
    ImageRaster,
    PathLike,
    load_dataset,
    parallel_map,
    prepare_output_dir,
    read_image,
    write_image,
)
from src.errors import DatasetError, DomainShiftError, ValidationError

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# kind -> {parameter: type}
OPERATOR_PARAMETERS: Dict[str, Dict[str, type]] = {
    'lowfreq': {'beta': float},
    'color': {'strength': float},
    'frosted': {'radius': int},
    'poster': {'levels': int},
    'mural': {'radius': int, 'levels': int},
}

BUILTIN_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'lowfreq': {'beta': 0.01},
    'color': {'strength': 0.4},
    'frosted': {'radius': 4},
    'poster': {'levels': 8},
    'mural': {'radius': 3, 'levels': 8},
}


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half-to-even."""
    return np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for one (seed, key...) combination, independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# Fourier helpers

def amplitude_phase(channel: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centered (fft-shifted) amplitude and phase spectra of a 2-D array."""
    spectrum = np.fft.fftshift(np.fft.fft2(np.asarray(channel, dtype=np.float64)))
    return np.abs(spectrum), np.angle(spectrum)


def from_amplitude_phase(amplitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Inverse of amplitude_phase; returns the real part."""
    spectrum = np.fft.ifftshift(amplitude * np.exp(1j * phase))
    return np.real(np.fft.ifft2(spectrum))


def _window_half_width(beta: float, height: int, width: int) -> int:
    half = int(np.floor(beta * min(height, width)))
    if half < 1:
        raise ValidationError(
            f"beta too small for image size: beta={beta} on {width}×{height} gives an empty window"
        )
    return half


def _resize_bilinear(image: ImageRaster, width: int, height: int) -> np.ndarray:
    if image.width == width and image.height == height:
        return np.asarray(image.pixels)
    resized = Image.fromarray(np.asarray(image.pixels)).resize((width, height), resample=Image.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def lowfreq_exchange(target: ImageRaster, source: ImageRaster, beta: float) -> ImageRaster:
    """
    Replace the low-frequency amplitude of `target` with that of `source`.

    The source is resized (bilinear) to the target size. Per RGB channel, the
    centered square window of half-width floor(beta * min(H, W)) takes the
    source amplitude; the target phase is kept everywhere.
    """
    if not 0 < beta <= 0.5:
        raise ValidationError(f"beta must be in (0, 0.5], got {beta}")
    height, width = target.height, target.width
    half = _window_half_width(beta, height, width)
    reference = _resize_bilinear(source, width, height)

    cy, cx = height // 2, width // 2
    rows = slice(max(cy - half, 0), cy + half + 1)
    cols = slice(max(cx - half, 0), cx + half + 1)

    out = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        amp_target, phase_target = amplitude_phase(target.pixels[:, :, c])
        amp_source, _ = amplitude_phase(reference[:, :, c])
        amp_target[rows, cols] = amp_source[rows, cols]
        out[:, :, c] = from_amplitude_phase(amp_target, phase_target)
    return ImageRaster(to_bytes(out))


def color_augment(image: ImageRaster, strength: float, seed: int) -> ImageRaster:
    """
    Random brightness, contrast and saturation.

    Factors b, c, s are drawn uniform in [1 - strength, 1 + strength] in that
    order. pixel' = clamp(((pixel - 128) * c + 128) * b), then each pixel is
    interpolated toward its luma by (1 - s).
    """
    if not 0.0 <= strength <= 1.0:
        raise ValidationError(f"color strength must be in [0, 1], got {strength}")
    rng = derive_rng(seed)
    brightness, contrast, saturation = rng.uniform(1.0 - strength, 1.0 + strength, size=3)

    pixels = np.asarray(image.pixels, dtype=np.float64)
    adjusted = np.clip(((pixels - 128.0) * contrast + 128.0) * brightness, 0.0, 255.0)
    luma = adjusted @ LUMA_WEIGHTS
    out = luma[:, :, None] + saturation * (adjusted - luma[:, :, None])
    return ImageRaster(to_bytes(out))


def frosted_glass(image: ImageRaster, radius: int, seed: int) -> ImageRaster:
    """Each output pixel copies an input pixel displaced by a random offset in [-radius, radius]²."""
    if radius < 1:
        raise ValidationError(f"frosted radius must be at least 1, got {radius}")
    if not radius < min(image.height, image.width) / 2:
        raise ValidationError(
            f"frosted radius {radius} must be below half the smaller image side "
            f"({min(image.height, image.width)})"
        )
    rng = derive_rng(seed)
    height, width = image.height, image.width
    offsets = rng.integers(-radius, radius + 1, size=(2, height, width))
    rows = np.clip(np.arange(height)[:, None] + offsets[0], 0, height - 1)
    cols = np.clip(np.arange(width)[None, :] + offsets[1], 0, width - 1)
    return ImageRaster(np.asarray(image.pixels)[rows, cols])


def _check_levels(levels: int):
    if not 2 <= levels <= 32:
        raise ValidationError(f"levels must be in 2..32, got {levels}")


def _quantize(values: np.ndarray, levels: int) -> np.ndarray:
    steps = np.rint(np.asarray(values, dtype=np.float64) * (levels - 1) / 255.0)
    return to_bytes(steps * 255.0 / (levels - 1))


def poster(image: ImageRaster, levels: int) -> ImageRaster:
    """Uniform quantization of every channel to `levels` values; idempotent."""
    _check_levels(levels)
    return ImageRaster(_quantize(image.pixels, levels))


def mural(image: ImageRaster, radius: int, levels: int) -> ImageRaster:
    """Box blur of the given radius followed by poster(levels)."""
    if radius < 1:
        raise ValidationError(f"mural radius must be at least 1, got {radius}")
    _check_levels(levels)
    blurred = ndimage.uniform_filter(
        np.asarray(image.pixels, dtype=np.float64), size=(2 * radius + 1, 2 * radius + 1, 1), mode='nearest'
    )
    return ImageRaster(_quantize(to_bytes(blurred), levels))


@dataclass(frozen=True)
class AugmentationOp:
    """One augmentation operator with validated parameters."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OPERATOR_PARAMETERS:
            raise ValidationError(
                f"unknown augmentation '{self.kind}'; expected one of {sorted(OPERATOR_PARAMETERS)}"
            )
        schema = OPERATOR_PARAMETERS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ValidationError(f"{self.kind} does not take parameter(s) {sorted(unknown)}")
        params = dict(BUILTIN_DEFAULTS[self.kind])
        for name, value in self.params.items():
            try:
                params[name] = schema[name](value)
            except (TypeError, ValueError):
                raise ValidationError(f"{self.kind}: parameter {name}={value!r} is not a valid {schema[name].__name__}")
        object.__setattr__(self, 'params', params)
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == 'lowfreq' and not 0 < p['beta'] <= 0.5:
            raise ValidationError(f"lowfreq beta must be in (0, 0.5], got {p['beta']}")
        if self.kind == 'color' and not 0 <= p['strength'] <= 1:
            raise ValidationError(f"color strength must be in [0, 1], got {p['strength']}")
        if self.kind in ('frosted', 'mural') and p['radius'] < 1:
            raise ValidationError(f"{self.kind} radius must be at least 1, got {p['radius']}")
        if self.kind in ('poster', 'mural'):
            _check_levels(p['levels'])

    @property
    def needs_reference(self) -> bool:
        return self.kind == 'lowfreq'

    def descriptor(self) -> str:
        """Canonical op spec, e.g. `mural:radius=3,levels=8`."""
        order = OPERATOR_PARAMETERS[self.kind]
        return f"{self.kind}:" + ','.join(f"{name}={self.params[name]}" for name in order)

    def apply(self, image: ImageRaster, reference: Optional[ImageRaster] = None, seed: Optional[int] = None) -> ImageRaster:
        seed = self.seed if seed is None else seed
        p = self.params
        if self.kind == 'lowfreq':
            if reference is None:
                raise ValidationError("lowfreq exchange needs a reference (source) image")
            return lowfreq_exchange(image, reference, p['beta'])
        if self.kind == 'color':
            return color_augment(image, p['strength'], seed)
        if self.kind == 'frosted':
            return frosted_glass(image, p['radius'], seed)
        if self.kind == 'poster':
            return poster(image, p['levels'])
        return mural(image, p['radius'], p['levels'])


def parse_op_spec(spec: str, seed: int = 0, defaults: Optional[Mapping[str, Mapping[str, Any]]] = None) -> AugmentationOp:
    """
    Parse `kind[:name=value,...]`, e.g. `lowfreq:beta=0.01` or `poster`.

    Parameters left out take `defaults[kind]`, then the built-in defaults.
    """
    text = spec.strip()
    kind, _, arguments = text.partition(':')
    kind = kind.strip()
    if kind not in OPERATOR_PARAMETERS:
        raise ValidationError(f"unknown augmentation '{kind}' in op spec {spec!r}")

    params: Dict[str, Any] = dict((defaults or {}).get(kind, {}))
    if arguments.strip():
        for item in arguments.split(','):
            name, sep, value = item.partition('=')
            if not sep or not name.strip() or not value.strip():
                raise ValidationError(f"malformed parameter {item!r} in op spec {spec!r}")
            params[name.strip()] = value.strip()
    return AugmentationOp(kind, params, seed)


def parse_op_list(text: str, seed: int = 0,
                  defaults: Optional[Mapping[str, Mapping[str, Any]]] = None) -> List[AugmentationOp]:
    """Parse `SPEC;SPEC;...` into an ordered list of ops."""
    specs = [part for part in text.split(';') if part.strip()]
    if not specs:
        raise ValidationError("operation list is empty")
    return [parse_op_spec(part, seed, defaults) for part in specs]


def apply_to_dataset(op: AugmentationOp, target: DatasetHandle, source: Optional[DatasetHandle],
                     out_root: PathLike, jobs: int = 1) -> DatasetHandle:
    """
    Apply `op` to every target image and write the results under out_root.

    File stems are preserved. The per-image seed is derived from (op.seed,
    image index); for lowfreq, the reference for image i is a source entry
    drawn by a generator seeded the same way. Output bytes do not depend on
    worker scheduling.
    """
    if target.kind != DatasetKind.IMAGES:
        raise ValidationError(f"dataset {target.root} holds {target.kind.value}, not images")
    if op.needs_reference and source is None:
        raise DatasetError(f"{op.kind} requires a source (reference) dataset")

    inputs = [target.root] if source is None else [target.root, source.root]
    out_root = prepare_output_dir(out_root, inputs)

    def _one(item: Tuple[int, str]) -> None:
        index, stem = item
        try:
            image = read_image(target.path_of(stem))
            reference = None
            if op.needs_reference:
                choice = int(derive_rng(op.seed, index).integers(len(source)))
                reference = read_image(source.path_of(source.entries[choice]))
            seed = int(np.random.SeedSequence([op.seed, index]).generate_state(1, np.uint64)[0])
            write_image(op.apply(image, reference, seed), out_root / f"{stem}.png")
        except ValidationError as e:
            raise ValidationError(f"{stem}: {e}") from e
        except (DomainShiftError, OSError) as e:
            raise DatasetError(f"{stem}: {e}") from e

    logger.info(f"Applying {op.descriptor()} to {len(target)} images -> {out_root}")
    parallel_map(_one, list(enumerate(target.entries)), jobs)
    return load_dataset(out_root, DatasetKind.IMAGES)

