"""
Result reporting: human-readable console summaries, JSON payloads and
report artifacts (JSON files, SVG regression plot).
"""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from src.core import PathLike

logger = logging.getLogger(__name__)


def to_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False)


def write_json(payload: Dict[str, Any], path: PathLike):
    """Write a JSON report file (LF endings, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes((to_json(payload) + '\n').encode('utf-8'))
    logger.info(f"Wrote report {path}")


class ResultPrinter:
    """Writes the result of one command to stdout, as JSON or as a summary."""

    def __init__(self, as_json: bool = False, stream: Optional[TextIO] = None):
        """
        Args:
            as_json: Emit exactly one JSON document instead of a summary.
            stream: Destination; defaults to sys.stdout at call time.
        """
        self.as_json = as_json
        self._stream = stream

    @property
    def stream(self) -> TextIO:
        return self._stream or sys.stdout

    def emit(self, title: str, payload: Dict[str, Any], lines: Sequence[str] = ()):
        if self.as_json:
            self.stream.write(to_json(payload) + '\n')
            return

        out = self.stream
        out.write("=" * 80 + "\n")
        out.write(f"{title}\n")
        out.write("=" * 80 + "\n")
        for line in lines:
            out.write(f"{line}\n")
        out.write("=" * 80 + "\n")
        out.flush()


def shift_lines(report: Dict[str, Any], limit: int = 8) -> List[str]:
    per_channel = report["per_channel_w"]
    lines = [
        f"Source: {report['source']}",
        f"Target: {report['target']}",
        f"Channels: {report['channels']}",
        f"Representation shift R: {report['representation_shift']:.6g}",
        "",
        "Per-channel W1 (largest first):",
    ]
    ranked = sorted(enumerate(per_channel), key=lambda item: (-item[1], item[0]))
    for channel, distance in ranked[:limit]:
        lines.append(f"  channel {channel:4d}: {distance:.6g}")
    if len(ranked) > limit:
        lines.append(f"  ... and {len(ranked) - limit} more")
    return lines


def construction_lines(report: Dict[str, Any]) -> List[str]:
    interval = report["interval"]
    lines = [
        f"Interval: ({interval['a'] - interval['delta']:.6g}, {interval['a'] + interval['delta']:.6g})",
        "",
    ]
    for i, attempt in enumerate(report["attempts"], 1):
        if attempt["error"]:
            outcome = f"failed: {attempt['error']}"
        else:
            outcome = f"R = {attempt['shift']:.6g} {'accepted' if attempt['accepted'] else 'rejected'}"
        lines.append(f"{i}. {attempt['op']}  {outcome}")
    lines.append("")
    lines.append(f"Status: {report['status']}")
    if report["selected"]:
        lines.append(f"Selected: {report['selected']}")
        lines.append(f"Output: {report['output_root']}")
    return lines


def miou_lines(result: Dict[str, Any], class_names: Optional[Sequence[str]] = None) -> List[str]:
    lines = []
    for k, iou in enumerate(result["per_class"]):
        name = class_names[k] if class_names and k < len(class_names) else f"class {k}"
        lines.append(f"  {name:>14}: {'n/a' if iou is None else f'{100 * iou:6.2f}'}")
    lines.append("")
    lines.append(f"mIoU: {100 * result['miou']:.2f} over {len(result['evaluated_classes'])} classes")
    if result.get("pixel_accuracy") is not None:
        lines.append(f"Pixel accuracy: {100 * result['pixel_accuracy']:.2f}")
    return lines


def regression_lines(result: Dict[str, Any]) -> List[str]:
    return [
        f"Points: {result['n_points']}",
        f"Pearson r: {result['pearson_r']:.4f}",
        f"Fit: miou = {result['slope']:.6g} * shift + {result['intercept']:.6g}",
    ]


def plot_regression(points: Sequence[Tuple[float, float]], slope: float, intercept: float,
                    pearson_r: float, path: PathLike):
    """
    Scatter of (shift, miou) with the least-squares line, saved as SVG.

    The SVG hash salt is fixed and no date is embedded, so equal inputs give
    byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    lo, hi = min(xs), max(xs)

    with plt.rc_context({'svg.hashsalt': 'representation-shift', 'svg.fonttype': 'path'}):
        fig, ax = plt.subplots(figsize=(5, 4))
        try:
            ax.scatter(xs, ys, s=18, color='tab:blue', zorder=3)
            ax.plot([lo, hi], [slope * lo + intercept, slope * hi + intercept], color='tab:red',
                    label=f"Pearson r = {pearson_r:.3f}")
            ax.set_xlabel('representation shift R')
            ax.set_ylabel('mIoU')
            ax.legend(loc='best')
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            fig.savefig(path, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
    logger.info(f"Wrote plot {path}")
