"""
Dataset construction: scan an ordered list of augmentation operations and
keep the first augmented target dataset whose representation shift from
the source lands strictly inside the requested interval.
"""

import logging
import math
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.augment import AugmentationOp, apply_to_dataset
from src.core import ChannelMeanMatrix, DatasetHandle, PathLike, prepare_output_dir
from src.errors import DomainShiftError, ValidationError
from src.features import FilterBank, dataset_channel_means
from src.shift import representation_shift

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShiftInterval:
    """Open interval (a - delta, a + delta)."""

    a: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.delta)):
            raise ValidationError(f"interval bounds must be finite, got a={self.a} delta={self.delta}")
        if not self.delta > 0:
            raise ValidationError(f"interval half-width must be positive, got {self.delta}")

    @property
    def low(self) -> float:
        return self.a - self.delta

    @property
    def high(self) -> float:
        return self.a + self.delta

    def contains(self, value: float) -> bool:
        return self.low < value < self.high

    @classmethod
    def parse(cls, text: str) -> 'ShiftInterval':
        """Parse `A,DELTA`."""
        parts = [part.strip() for part in text.split(',')]
        if len(parts) != 2:
            raise ValidationError(f"interval must be given as A,DELTA, got {text!r}")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError:
            raise ValidationError(f"interval must be given as A,DELTA, got {text!r}") from None


class ConstructionStatus(str, Enum):
    FOUND = 'found'
    NOT_FOUND = 'not_found'
    RETURNED_LAST = 'returned_last'


@dataclass(frozen=True)
class Attempt:
    op: str
    shift: Optional[float]
    accepted: bool
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"op": self.op, "shift": self.shift, "accepted": self.accepted, "error": self.error}


@dataclass(frozen=True)
class ConstructionReport:
    interval: ShiftInterval
    attempts: Tuple[Attempt, ...]
    selected: Optional[str]
    output_root: Optional[Path]
    status: ConstructionStatus

    def __post_init__(self):
        accepted = [attempt for attempt in self.attempts if attempt.accepted]
        if len(accepted) > 1:
            raise ValidationError("a construction report holds at most one accepted attempt")
        if accepted and not self.interval.contains(accepted[0].shift):
            raise ValidationError("accepted attempt lies outside the interval")

    @property
    def found(self) -> bool:
        return self.status == ConstructionStatus.FOUND

    def to_dict(self) -> Dict[str, Any]:
        return {
            "interval": {"a": self.interval.a, "delta": self.interval.delta},
            "status": self.status.value,
            "selected": self.selected,
            "output_root": None if self.output_root is None else str(self.output_root),
            "attempts": [attempt.to_dict() for attempt in self.attempts],
        }


def construct_dataset(interval: ShiftInterval, source: DatasetHandle, target: DatasetHandle,
                      ops: Sequence[AugmentationOp], bank: FilterBank, out_root: PathLike,
                      jobs: int = 1, return_last: bool = False,
                      source_features: Optional[ChannelMeanMatrix] = None) -> ConstructionReport:
    """
    Search `ops` in order for the first candidate with R inside `interval`.

    Candidate i is written to out_root/<i>-<kind> (two-digit, 1-based) and
    measured as R(candidate, source) with `bank`. The accepted candidate is
    kept; rejected candidates are deleted. A failing op is logged and counted
    as a rejection. When no op qualifies the report has status not_found,
    unless return_last is set, in which case the last candidate that was
    measured is kept and reported with status returned_last. Failed ops
    leave no candidate, so a failing final op falls back to the one before;
    if every op fails the status stays not_found.

    Args:
        source_features: Precomputed source channel means (for example from
            a feature dump). Candidates are always measured with `bank`, so
            the channel counts must agree.
    """
    if not ops:
        raise ValidationError("construction needs at least one augmentation operation")

    if source_features is None:
        source_features = dataset_channel_means(bank, source, jobs)
    elif source_features.n_channels != bank.n_channels:
        raise ValidationError(
            f"channel-count mismatch: source features have {source_features.n_channels} channels, "
            f"the extractor produces {bank.n_channels}"
        )

    out_root = prepare_output_dir(out_root, [source.root, target.root])

    logger.info("=" * 80)
    logger.info(f"Dataset construction: interval ({interval.low:.6g}, {interval.high:.6g}), {len(ops)} ops")
    logger.info("=" * 80)

    attempts: List[Attempt] = []
    selected: Optional[str] = None
    selected_root: Optional[Path] = None
    status = ConstructionStatus.NOT_FOUND
    # most recent measured candidate, kept on disk while return_last is set
    fallback: Optional[Tuple[str, Path]] = None

    for index, op in enumerate(ops, start=1):
        descriptor = op.descriptor()
        candidate_root = out_root / f"{index:02d}-{op.kind}"
        try:
            candidate = apply_to_dataset(op, target, source, candidate_root, jobs)
            features = dataset_channel_means(bank, candidate, jobs)
            shift = representation_shift(features, source_features, jobs).representation_shift
        except (DomainShiftError, OSError) as e:
            logger.error(f"[{index}/{len(ops)}] {descriptor} failed: {e}")
            attempts.append(Attempt(descriptor, None, False, str(e)))
            shutil.rmtree(candidate_root, ignore_errors=True)
            continue

        if interval.contains(shift):
            logger.info(f"[{index}/{len(ops)}] {descriptor}: R = {shift:.6g} accepted")
            attempts.append(Attempt(descriptor, shift, True))
            selected, selected_root, status = descriptor, candidate_root, ConstructionStatus.FOUND
            break

        logger.info(f"[{index}/{len(ops)}] {descriptor}: R = {shift:.6g} rejected")
        attempts.append(Attempt(descriptor, shift, False))
        if return_last:
            if fallback is not None:
                shutil.rmtree(fallback[1])
            fallback = (descriptor, candidate_root)
        else:
            shutil.rmtree(candidate_root)

    if fallback is not None:
        if status == ConstructionStatus.FOUND:
            shutil.rmtree(fallback[1])
        else:
            selected, selected_root = fallback
            status = ConstructionStatus.RETURNED_LAST
            logger.warning(f"No operation produced a shift inside the interval; keeping {selected}")

    if status == ConstructionStatus.NOT_FOUND:
        logger.warning("No operation produced a shift inside the interval")

    return ConstructionReport(interval, tuple(attempts), selected, selected_root, status)
