"""
Evaluation statistics: confusion matrices, mIoU, and the regression of
segmentation accuracy against representation shift.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.core import (
    IGNORE_LABEL,
    DatasetHandle,
    DatasetKind,
    PathLike,
    SegMask,
    check_paired,
    parallel_map,
    read_mask,
)
from src.errors import DatasetError, DomainShiftError, FormatError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """K×K int64 counts; counts[g, p] = pixels with ground truth g predicted as p."""

    num_classes: int
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (self.num_classes, self.num_classes):
            raise ValidationError(
                f"confusion counts must be {self.num_classes}×{self.num_classes}, got {counts.shape}"
            )
        if np.any(counts < 0):
            raise ValidationError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def empty(cls, num_classes: int) -> 'ConfusionMatrix':
        return cls(num_classes, np.zeros((num_classes, num_classes), dtype=np.int64))

    def __add__(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        if other.num_classes != self.num_classes:
            raise ValidationError(f"cannot add {self.num_classes}-class and {other.num_classes}-class matrices")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> Optional[float]:
        total = self.total
        return None if total == 0 else int(np.trace(self.counts)) / total


def confusion_of(gt: SegMask, pred: SegMask, num_classes: int) -> ConfusionMatrix:
    """Confusion matrix of one mask pair; ground-truth 255 pixels are skipped."""
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise ValidationError(
            f"mask dimensions differ: ground truth {gt.width}×{gt.height}, prediction {pred.width}×{pred.height}"
        )
    truth = np.asarray(gt.labels).ravel().astype(np.int64)
    guess = np.asarray(pred.labels).ravel().astype(np.int64)

    bad = np.flatnonzero(guess >= num_classes)
    if bad.size:
        index = int(bad[0])
        raise ValidationError(
            f"prediction label {guess[index]} at pixel index {index} is outside 0..{num_classes - 1}"
        )
    bad = np.flatnonzero((truth >= num_classes) & (truth != IGNORE_LABEL))
    if bad.size:
        index = int(bad[0])
        raise ValidationError(f"ground-truth label {truth[index]} at pixel index {index} is out of range")

    keep = truth != IGNORE_LABEL
    count = np.bincount(num_classes * truth[keep] + guess[keep], minlength=num_classes ** 2)
    return ConfusionMatrix(num_classes, count.reshape(num_classes, num_classes))


def accumulate(cm: ConfusionMatrix, gt: SegMask, pred: SegMask) -> ConfusionMatrix:
    """Return cm plus the counts of one (ground truth, prediction) pair."""
    return cm + confusion_of(gt, pred, cm.num_classes)


@dataclass(frozen=True)
class MIoUResult:
    per_class: Tuple[Optional[float], ...]
    miou: float
    evaluated_classes: Tuple[int, ...]
    pixel_accuracy: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_class": list(self.per_class),
            "miou": self.miou,
            "evaluated_classes": list(self.evaluated_classes),
            "pixel_accuracy": self.pixel_accuracy,
        }


def miou(cm: ConfusionMatrix, absent_as_zero: bool = False) -> MIoUResult:
    """
    Per-class IoU and their mean.

    IoU_k = counts[k, k] / (row_k + col_k - counts[k, k]). A class with a zero
    denominator (absent from both ground truth and prediction) is undefined
    and left out of the mean, unless absent_as_zero counts it as 0.

    Raises:
        ValidationError: "no evaluated classes" when the matrix is empty.
    """
    counts = cm.counts
    intersection = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - intersection
    if not np.any(union > 0):
        raise ValidationError("no evaluated classes")

    per_class: List[Optional[float]] = []
    evaluated = []
    for k in range(cm.num_classes):
        if union[k] > 0:
            per_class.append(int(intersection[k]) / int(union[k]))
            evaluated.append(k)
        elif absent_as_zero:
            per_class.append(0.0)
            evaluated.append(k)
        else:
            per_class.append(None)

    mean = float(np.mean([per_class[k] for k in evaluated]))
    return MIoUResult(tuple(per_class), mean, tuple(evaluated), cm.pixel_accuracy())


def evaluate_datasets(gt: DatasetHandle, pred: DatasetHandle, num_classes: int = 19,
                      jobs: int = 1) -> ConfusionMatrix:
    """Pair masks by stem and sum their confusion matrices."""
    for handle in (gt, pred):
        if handle.kind != DatasetKind.MASKS:
            raise ValidationError(f"dataset {handle.root} holds {handle.kind.value}, not masks")
    check_paired(gt, pred)

    def _one(stem: str) -> ConfusionMatrix:
        try:
            truth = read_mask(gt.path_of(stem), num_classes)
            guess = read_mask(pred.path_of(stem), IGNORE_LABEL)
            return confusion_of(truth, guess, num_classes)
        except (DomainShiftError, OSError) as e:
            raise DatasetError(f"{stem}: {e}") from e

    logger.info(f"Evaluating {len(gt)} mask pairs over {num_classes} classes")
    total = ConfusionMatrix.empty(num_classes)
    for cm in parallel_map(_one, gt.entries, jobs):
        total = total + cm
    return total


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    pearson_r: float
    n_points: int
    p_value: Optional[float] = None
    stderr: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "pearson_r": self.pearson_r,
            "n_points": self.n_points,
            "p_value": self.p_value,
            "stderr": self.stderr,
        }


def regress(points: Sequence[Tuple[float, float]]) -> RegressionResult:
    """
    Ordinary least squares of mIoU (y) on representation shift (x), with
    the Pearson product-moment correlation.

    Raises:
        ValidationError: fewer than two points, non-finite values, or a
            constant coordinate (the message names which one).
    """
    data = np.asarray(points, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValidationError(f"regression needs (shift, miou) pairs, got shape {data.shape}")
    if data.shape[0] < 2:
        raise ValidationError(f"regression needs at least 2 points, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        raise ValidationError("regression points must be finite")

    x, y = data[:, 0], data[:, 1]
    if np.all(x == x[0]):
        raise ValidationError("degenerate input: x (shift) is constant")
    if np.all(y == y[0]):
        raise ValidationError("degenerate input: y (miou) is constant")

    fit = stats.linregress(x, y)
    p_value = float(fit.pvalue) if np.isfinite(fit.pvalue) else None
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else None
    return RegressionResult(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        pearson_r=float(fit.rvalue),
        n_points=int(data.shape[0]),
        p_value=p_value,
        stderr=stderr,
    )


def read_points(path: PathLike) -> List[Tuple[float, float]]:
    """
    Read (shift, miou) pairs from a two-column CSV.

    Lines starting with '#' are comments; a leading non-numeric header row
    is skipped.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, comment='#', skipinitialspace=True, dtype=str)
    except pd.errors.EmptyDataError:
        raise FormatError(f"no data rows in {path}") from None
    except pd.errors.ParserError as e:
        raise FormatError(f"malformed CSV {path}: {e}") from e

    if frame.shape[1] != 2:
        raise FormatError(f"{path} must have exactly two columns (shift, miou), found {frame.shape[1]}")

    numeric = frame.apply(pd.to_numeric, errors='coerce')
    if len(frame) and numeric.iloc[0].isna().any():
        numeric = numeric.iloc[1:]
        frame = frame.iloc[1:]
    bad = numeric.isna().any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise FormatError(f"non-numeric value in {path}: {list(frame.iloc[row])}")
    return [(float(a), float(b)) for a, b in numeric.itertuples(index=False)]
