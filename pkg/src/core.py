"""
Shared data model and file formats.

Holds the in-memory types every other module works with (images, masks,
boxes, channel-mean matrices, dataset handles) and the readers/writers for
the lossless raster files, the binary feature dump ("WFD1") and the text
box file.
"""

import logging
import re
import shutil
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from src.errors import DatasetError, FormatError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IGNORE_LABEL = 255
RASTER_EXTENSIONS = ('.png', '.bmp', '.ppm', '.pgm', '.tif', '.tiff')

OUTPUT_MARKER = '.domain-shift-output'
FEATURE_DUMP_MAGIC = b'WFD1'
_DUMP_HEADER = struct.Struct('<4sII')
_TAG_LENGTH = struct.Struct('<H')

_SIXTEEN_BIT_MODES = {'I;16', 'I;16B', 'I;16L', 'I;16N', 'I', 'F', '1'}
_UINT = r'(0|[1-9][0-9]*)'
_BOX_LINE = re.compile(rf'(\S+) {_UINT} {_UINT} {_UINT} {_UINT} {_UINT}')
_WHITESPACE = re.compile(r'\s')


def _frozen_array(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array).copy()
    array.setflags(write=False)
    return array


class DatasetKind(str, Enum):
    IMAGES = 'images'
    MASKS = 'masks'


@dataclass(frozen=True, eq=False)
class ImageRaster:
    """H×W×3 8-bit RGB image."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.dtype != np.uint8:
            raise ValidationError(f"image pixels must be uint8, got {pixels.dtype}")
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValidationError(f"image pixels must have shape H×W×3, got {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValidationError("image must be at least 1×1")
        object.__setattr__(self, 'pixels', _frozen_array(pixels))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageRaster):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class SegMask:
    """H×W map of class ids in 0..num_classes-1, or 255 for ignore."""

    labels: np.ndarray
    num_classes: int = 19

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype != np.uint8:
            raise ValidationError(f"mask labels must be uint8, got {labels.dtype}")
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise ValidationError(f"mask labels must have shape H×W, got {labels.shape}")
        if not 1 <= self.num_classes <= IGNORE_LABEL:
            raise ValidationError(f"num_classes must be in 1..255, got {self.num_classes}")

        bad = np.flatnonzero((labels >= self.num_classes) & (labels != IGNORE_LABEL))
        if bad.size:
            index = int(bad[0])
            row, col = divmod(index, labels.shape[1])
            value = int(labels.flat[index])
            raise ValidationError(
                f"label {value} at pixel index {index} (row {row}, col {col}) "
                f"is outside 0..{self.num_classes - 1} and is not {IGNORE_LABEL}"
            )
        object.__setattr__(self, 'labels', _frozen_array(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegMask):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, order=True)
class LabeledBox:
    """Class-tagged axis-aligned box with inclusive pixel coordinates."""

    class_id: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if min(self.class_id, self.x_min, self.y_min) < 0:
            raise ValidationError(f"box fields must be non-negative: {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"box minimum exceeds maximum: {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def check_within(self, width: int, height: int, num_classes: Optional[int] = None):
        """Raise ValidationError if the box does not fit a width×height image."""
        if self.x_max >= width or self.y_max >= height:
            raise ValidationError(f"box {self} exceeds image bounds {width}×{height}")
        if num_classes is not None and self.class_id >= num_classes:
            raise ValidationError(f"box class {self.class_id} is outside 0..{num_classes - 1}")

    def slices(self) -> Tuple[slice, slice]:
        """Row and column slices covering the box."""
        return slice(self.y_min, self.y_max + 1), slice(self.x_min, self.x_max + 1)

    def to_line(self, stem: str) -> str:
        if not stem or _WHITESPACE.search(stem):
            raise ValidationError(f"stem {stem!r} cannot be written to a box file: it is empty or contains whitespace")
        return f"{stem} {self.class_id} {self.x_min} {self.y_min} {self.x_max} {self.y_max}"


@dataclass(frozen=True, eq=False)
class ChannelMeanMatrix:
    """n_images × C matrix of per-channel mean activations."""

    values: np.ndarray
    source_tag: str = ''

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"channel-mean matrix must be a non-empty 2-D array, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("channel-mean matrix contains non-finite values")
        object.__setattr__(self, 'values', _frozen_array(values))

    @property
    def n_images(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def column(self, channel: int) -> np.ndarray:
        return self.values[:, channel].astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelMeanMatrix):
            return NotImplemented
        return (
            self.source_tag == other.source_tag
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(frozen=True)
class DatasetHandle:
    """Directory of rasters addressed by file stem."""

    root: Path
    entries: Tuple[str, ...]
    kind: DatasetKind
    files: Tuple[str, ...]

    def __post_init__(self):
        if len(self.entries) != len(self.files):
            raise ValidationError("dataset entries and files must have equal length")
        keys = [stem.encode('utf-8') for stem in self.entries]
        if keys != sorted(set(keys)):
            raise ValidationError("dataset entries must be sorted and duplicate-free")

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def _file_by_stem(self) -> Dict[str, str]:
        return dict(zip(self.entries, self.files))

    def path_of(self, stem: str) -> Path:
        try:
            return self.root / self._file_by_stem[stem]
        except KeyError:
            raise DatasetError(f"no entry '{stem}' in dataset {self.root}") from None


def load_dataset(root: PathLike, kind: DatasetKind = DatasetKind.IMAGES) -> DatasetHandle:
    """
    Index a directory of raster files.

    Entries are file stems sorted by their UTF-8 bytes; files without a
    recognised raster extension and subdirectories are ignored.

    Raises:
        DatasetError: missing directory, empty dataset or duplicate stems.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")

    by_stem: Dict[str, str] = {}
    for path in root.iterdir():
        if not path.is_file() or path.suffix.lower() not in RASTER_EXTENSIONS:
            continue
        if path.stem in by_stem:
            raise DatasetError(f"duplicate stem '{path.stem}' in {root}: {by_stem[path.stem]}, {path.name}")
        by_stem[path.stem] = path.name

    if not by_stem:
        raise DatasetError(f"empty dataset: no raster files in {root}")

    entries = tuple(sorted(by_stem, key=lambda stem: stem.encode('utf-8')))
    handle = DatasetHandle(
        root=root,
        entries=entries,
        kind=DatasetKind(kind),
        files=tuple(by_stem[stem] for stem in entries),
    )
    logger.debug(f"Loaded {kind} dataset {root} with {len(handle)} entries")
    return handle


def check_paired(first: DatasetHandle, second: DatasetHandle):
    """Raise DatasetError unless both datasets hold exactly the same stems."""
    if first.entries == second.entries:
        return
    only_first = sorted(set(first.entries) - set(second.entries))
    only_second = sorted(set(second.entries) - set(first.entries))
    raise DatasetError(
        f"stem mismatch between {first.root} and {second.root}: "
        f"only in first {only_first[:5]}, only in second {only_second[:5]}"
    )


def prepare_output_dir(out_root: PathLike, inputs: Sequence[PathLike] = ()) -> Path:
    """
    Create out_root as a fresh, empty output directory.

    An existing out_root is replaced only when it is empty or was written by
    this toolkit (it holds OUTPUT_MARKER). out_root may not equal, contain or
    lie inside any of the input directories.

    Raises:
        ValidationError: out_root overlaps an input directory.
        DatasetError: out_root is a file, or a non-empty directory without the marker.
    """
    out_root = Path(out_root)
    resolved = out_root.resolve()
    for root in inputs:
        other = Path(root).resolve()
        if resolved == other or resolved in other.parents or other in resolved.parents:
            raise ValidationError(f"output directory {out_root} overlaps input directory {root}")

    if out_root.exists():
        if not out_root.is_dir():
            raise DatasetError(f"output path {out_root} exists and is not a directory")
        if any(out_root.iterdir()) and not (out_root / OUTPUT_MARKER).is_file():
            raise DatasetError(f"refusing to replace {out_root}: non-empty directory not written by this toolkit")
        logger.debug(f"Replacing previous output {out_root}")
        shutil.rmtree(out_root)
    out_root.mkdir(parents=True)
    (out_root / OUTPUT_MARKER).write_bytes(b'')
    return out_root


def _open_raster(path: PathLike) -> Image.Image:
    try:
        image = Image.open(path)
        rawmode = image.tile[0][3] if image.tile else ''
        image.load()
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError, ValueError) as e:
        raise FormatError(f"truncated or unreadable raster {path}: {e}") from e

    if image.mode in _SIXTEEN_BIT_MODES or ';16' in str(rawmode):
        raise FormatError(f"unsupported bit depth in {path} (mode {image.mode})")
    return image


def read_image(path: PathLike) -> ImageRaster:
    """Read an 8-bit RGB raster; paletted and grayscale files are expanded to RGB."""
    image = _open_raster(path)
    if image.mode in ('P', 'L'):
        image = image.convert('RGB')
    elif image.mode != 'RGB':
        raise FormatError(f"unsupported pixel format {image.mode} in {path}")
    return ImageRaster(np.asarray(image, dtype=np.uint8))


def write_image(image: ImageRaster, path: PathLike):
    """Write an image as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image.pixels)).save(path, format='PNG')


def read_mask(path: PathLike, num_classes: int = 19) -> SegMask:
    """Read a single-channel 8-bit class-id raster and validate its labels."""
    image = _open_raster(path)
    if image.mode not in ('L', 'P'):
        raise FormatError(f"mask {path} must be single-channel 8-bit, got mode {image.mode}")
    try:
        return SegMask(np.asarray(image, dtype=np.uint8), num_classes)
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from e


def write_mask(mask: SegMask, path: PathLike):
    """Write a mask as single-channel PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(mask.labels)).save(path, format='PNG')


def write_feature_dump(matrix: ChannelMeanMatrix, path: PathLike):
    """
    Write the binary feature dump.

    Layout: magic "WFD1" | u32 n_images | u32 n_channels |
    n_images*n_channels float32 row-major | u16 tag length | UTF-8 tag.
    All integers and floats little-endian.
    """
    tag = matrix.source_tag.encode('utf-8')
    if len(tag) > 0xFFFF:
        raise ValidationError(f"feature dump tag is {len(tag)} bytes; the limit is 65535")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = b''.join([
        _DUMP_HEADER.pack(FEATURE_DUMP_MAGIC, matrix.n_images, matrix.n_channels),
        np.asarray(matrix.values, dtype='<f4').tobytes(order='C'),
        _TAG_LENGTH.pack(len(tag)),
        tag,
    ])
    path.write_bytes(payload)


def read_feature_dump(path: PathLike) -> ChannelMeanMatrix:
    """Read a feature dump written by write_feature_dump or an external extractor."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FEATURE_DUMP_MAGIC:
        raise FormatError(f"bad magic in feature dump {path}")
    if len(data) < _DUMP_HEADER.size:
        raise FormatError(f"feature dump {path} is truncated: declared sizes inconsistent with file length")

    _, n_images, n_channels = _DUMP_HEADER.unpack_from(data, 0)
    if n_images < 1 or n_channels < 1:
        raise FormatError(f"feature dump {path} declares an empty matrix ({n_images}×{n_channels})")

    body_end = _DUMP_HEADER.size + 4 * n_images * n_channels
    if len(data) < body_end + _TAG_LENGTH.size:
        raise FormatError(f"feature dump {path}: declared sizes inconsistent with file length")
    (tag_length,) = _TAG_LENGTH.unpack_from(data, body_end)
    if len(data) != body_end + _TAG_LENGTH.size + tag_length:
        raise FormatError(f"feature dump {path}: declared sizes inconsistent with file length")

    values = np.frombuffer(data, dtype='<f4', count=n_images * n_channels, offset=_DUMP_HEADER.size)
    values = values.reshape(n_images, n_channels).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"feature dump {path} contains non-finite values")

    try:
        tag = data[body_end + _TAG_LENGTH.size:].decode('utf-8')
    except UnicodeDecodeError as e:
        raise FormatError(f"feature dump {path} has an invalid UTF-8 tag: {e}") from e
    return ChannelMeanMatrix(values, tag)


def parse_box_line(line: str) -> Tuple[str, LabeledBox]:
    """Parse `<stem> <class_id> <x_min> <y_min> <x_max> <y_max>`."""
    match = _BOX_LINE.fullmatch(line)
    if match is None:
        raise FormatError(f"malformed box line: {line!r}")
    stem = match.group(1)
    class_id, x_min, y_min, x_max, y_max = (int(v) for v in match.groups()[1:])
    try:
        return stem, LabeledBox(class_id, x_min, y_min, x_max, y_max)
    except ValidationError as e:
        raise FormatError(f"invalid box line {line!r}: {e}") from e


def read_boxes(path: PathLike) -> Dict[str, List[LabeledBox]]:
    """Read a box file; boxes are grouped by stem in file order."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise FormatError(f"box file {path} is not UTF-8: {e}") from e

    lines = text.split('\n')
    if lines and lines[-1] == '':
        lines.pop()

    boxes: Dict[str, List[LabeledBox]] = {}
    for number, line in enumerate(lines, 1):
        try:
            stem, box = parse_box_line(line)
        except FormatError as e:
            raise FormatError(f"{path}:{number}: {e}") from e
        boxes.setdefault(stem, []).append(box)
    return boxes


def write_boxes(boxes: Mapping[str, Sequence[LabeledBox]], path: PathLike):
    """Write boxes one per line with LF endings, in mapping order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [box.to_line(stem) for stem, stem_boxes in boxes.items() for box in stem_boxes]
    path.write_bytes(''.join(line + '\n' for line in lines).encode('utf-8'))


def parallel_map(function, items: Sequence, jobs: int = 1) -> List:
    """
    Apply function to every item on a pool of `jobs` threads.

    Results come back in item order regardless of completion order.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as executor:
        return list(executor.map(function, items))
