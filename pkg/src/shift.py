"""
Wasserstein-1 distance between one-dimensional empirical distributions, and
the representation shift R: the channel-averaged W1 between source and
target distributions of channel-mean activations.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from src.core import ChannelMeanMatrix, parallel_map
from src.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Uniform measure over a non-empty multiset of finite samples."""

    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.samples, dtype=np.float64).ravel()
        if values.size == 0:
            raise ValidationError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(values)):
            raise ValidationError("empirical distribution samples must be finite")
        values = np.sort(values, kind='stable')
        values.setflags(write=False)
        object.__setattr__(self, 'samples', values)

    def __len__(self) -> int:
        return self.samples.size

    def breakpoints(self) -> np.ndarray:
        """Right ends k/n of the intervals on which the quantile function is constant."""
        n = self.samples.size
        return np.arange(1, n + 1, dtype=np.float64) / n

    def quantile(self, u) -> np.ndarray:
        """Left-continuous inverse CDF evaluated at u in (0, 1]."""
        index = np.searchsorted(self.breakpoints(), np.asarray(u, dtype=np.float64), side='left')
        return self.samples[np.minimum(index, self.samples.size - 1)]


def wasserstein1(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """
    Exact W1 between two empirical measures.

    Integrates |F_p^-1(u) - F_q^-1(u)| over (0, 1]. Both quantile functions
    are piecewise constant, so the integral is a finite sum over the merged
    breakpoints {k/n} ∪ {l/m}. Unequal sample counts, ties and repeated values
    need no special handling.
    """
    if not isinstance(p, EmpiricalDistribution):
        p = EmpiricalDistribution(p)
    if not isinstance(q, EmpiricalDistribution):
        q = EmpiricalDistribution(q)

    breaks = np.union1d(p.breakpoints(), q.breakpoints())
    widths = np.diff(breaks, prepend=0.0)
    gaps = np.abs(p.quantile(breaks) - q.quantile(breaks))
    return math.fsum((widths * gaps).tolist())


@dataclass(frozen=True)
class ShiftReport:
    """Per-channel W1 distances, their mean R, and provenance."""

    per_channel_w: Tuple[float, ...]
    representation_shift: float
    source_tag: str = ''
    target_tag: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'per_channel_w', tuple(float(w) for w in self.per_channel_w))
        if not self.per_channel_w:
            raise ValidationError("shift report needs at least one channel")
        if any(not math.isfinite(w) or w < 0 for w in self.per_channel_w):
            raise ValidationError("per-channel distances must be finite and non-negative")

    @property
    def n_channels(self) -> int:
        return len(self.per_channel_w)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "channels": self.n_channels,
            "per_channel_w": list(self.per_channel_w),
            "representation_shift": self.representation_shift,
            "source": self.source_tag,
            "target": self.target_tag,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ShiftReport':
        try:
            report = cls(
                per_channel_w=tuple(data["per_channel_w"]),
                representation_shift=float(data["representation_shift"]),
                source_tag=str(data.get("source", "")),
                target_tag=str(data.get("target", "")),
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed shift report: {e}") from e
        if data.get("channels", report.n_channels) != report.n_channels:
            raise ValidationError("shift report channel count does not match its distances")
        return report


def representation_shift(source: ChannelMeanMatrix, target: ChannelMeanMatrix, jobs: int = 1) -> ShiftReport:
    """
    R(source, target) = mean over channels c of W1(source[:, c], target[:, c]).

    The mean is taken with an exactly rounded sum, so R does not depend on
    the order in which channel distances are computed.
    """
    if source.n_channels != target.n_channels:
        raise ValidationError(
            f"channel-count mismatch: source has {source.n_channels} channels, "
            f"target has {target.n_channels}"
        )

    def _channel(c: int) -> float:
        return wasserstein1(EmpiricalDistribution(source.column(c)), EmpiricalDistribution(target.column(c)))

    distances = parallel_map(_channel, range(source.n_channels), jobs)
    shift = math.fsum(distances) / len(distances)
    logger.debug(f"Representation shift over {len(distances)} channels: {shift:.6g}")
    return ShiftReport(tuple(distances), shift, source.source_tag, target.source_tag)
