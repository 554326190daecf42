"""
Command-line entry point for the domain shift toolkit.
Each pipeline stage is a subcommand; results go to stdout, logs to stderr.

Usage:
    python -m src.main <subcommand> [flags]
"""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional, Sequence

from src.augment import apply_to_dataset, parse_op_list, parse_op_spec
from src.config import Config
from src.construct import ConstructionStatus, ShiftInterval, construct_dataset
from src.core import (
    DatasetKind,
    load_dataset,
    read_boxes,
    read_feature_dump,
    write_boxes,
    write_feature_dump,
)
from src.errors import ConstructionNotFound, DomainShiftError, ValidationError
from src.evaluation import evaluate_datasets, miou, read_points, regress
from src.features import bank_from_settings, dataset_channel_means
from src.reporting import (
    ResultPrinter,
    construction_lines,
    miou_lines,
    plot_regression,
    regression_lines,
    shift_lines,
    write_json,
)
from src.shift import representation_shift
from src.weaklabel import (
    ComponentExtractionConfig,
    GrabCutConfig,
    boxes_for_dataset,
    pseudo_label_dataset,
)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _positive_int(text: str) -> int:
    value = _non_negative_int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument('--seed', type=_non_negative_int, help='Global seed (default: 0)')
    common.add_argument('--jobs', type=_positive_int, help='Worker count (default: logical CPUs)')
    common.add_argument('--quiet', action='store_true', help='Only log warnings and errors')
    common.add_argument('--json', action='store_true', help='Print the result as one JSON document')
    common.add_argument('--config', help='JSON file overriding the built-in defaults')
    return common


def _extractor_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--layers', type=_positive_int, help='Filter bank depth (default: 2)')
    parser.add_argument('--channels', type=_int_list, help='Channels per layer (default: 32,64)')
    parser.add_argument('--kernel-size', type=_positive_int, help='Kernel side (default: 3)')
    parser.add_argument('--stride', type=_positive_int, help='Convolution stride (default: 2)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='python -m src.main',
        allow_abbrev=False,
        description='Domain shift toolkit - measure, construct and evaluate representation shift'
    )
    common = _common_flags()
    commands = parser.add_subparsers(dest='command', metavar='<command>')
    commands.required = True

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        return commands.add_parser(name, parents=[common], allow_abbrev=False, help=help_text)

    p = command('extract-features', 'Write channel-mean features of an image directory')
    p.add_argument('--input', required=True, help='Image directory')
    p.add_argument('--output', required=True, help='Feature dump file')
    _extractor_flags(p)

    p = command('shift', 'Representation shift between two feature dumps')
    p.add_argument('--source', required=True, help='Source feature dump')
    p.add_argument('--target', required=True, help='Target feature dump')
    p.add_argument('--report', help='Also write the JSON report to this file')

    p = command('augment', 'Apply one augmentation to an image directory')
    p.add_argument('--op', required=True, help='Operator, e.g. lowfreq:beta=0.01 or mural:radius=3,levels=8')
    p.add_argument('--input', required=True, help='Target image directory')
    p.add_argument('--ref', help='Source (reference) image directory; required by lowfreq')
    p.add_argument('--output', required=True, help='Output directory (replaced)')

    p = command('construct', 'Find the first augmentation whose shift lies in an interval')
    p.add_argument('--interval', required=True, help='A,DELTA for the open interval (A-DELTA, A+DELTA)')
    p.add_argument('--source', required=True, help='Source image directory')
    p.add_argument('--target', required=True, help='Target image directory')
    p.add_argument('--ops', required=True, help='Semicolon-separated operator list')
    p.add_argument('--output', required=True, help='Output directory (replaced)')
    p.add_argument('--return-last', action='store_true',
                   help='Keep the last candidate when no operation qualifies')
    p.add_argument('--features-from', help='Precomputed source feature dump')
    p.add_argument('--report', help='Also write the JSON report to this file')
    _extractor_flags(p)

    p = command('boxes-from-masks', 'Connected-component boxes from masks')
    p.add_argument('--masks', required=True, help='Mask directory')
    p.add_argument('--output', required=True, help='Box file')
    p.add_argument('--connectivity', type=int, choices=(4, 8), help='Pixel adjacency (default: 8)')
    p.add_argument('--min-area', type=_positive_int, help='Smallest kept component (default: 64)')
    p.add_argument('--classes', type=_positive_int, help='Number of classes (default: 19)')

    p = command('pseudo-labels', 'GrabCut pseudo-masks from boxes')
    p.add_argument('--images', required=True, help='Image directory')
    p.add_argument('--boxes', required=True, help='Box file')
    p.add_argument('--output', required=True, help='Pseudo-mask directory (replaced)')
    p.add_argument('--iters', type=_positive_int, help='GrabCut iterations (default: 5)')
    p.add_argument('--gamma', type=float, help='Smoothness weight (default: 50)')
    p.add_argument('--components', type=_positive_int, help='GMM components per model (default: 5)')
    p.add_argument('--classes', type=_positive_int, help='Number of classes (default: 19)')

    p = command('miou', 'Mean IoU of predicted masks')
    p.add_argument('--gt', required=True, help='Ground-truth mask directory')
    p.add_argument('--pred', required=True, help='Predicted mask directory')
    p.add_argument('--classes', type=_positive_int, help='Number of classes (default: 19)')
    p.add_argument('--absent-as-zero', action='store_true',
                   help='Count classes absent from both masks as IoU 0')

    p = command('correlate', 'Regress mIoU on representation shift')
    p.add_argument('--pairs', required=True, help='Two-column CSV of (shift, miou)')
    p.add_argument('--plot', help='Write an SVG scatter plot with the fitted line')

    return parser


def _pick(flag, default):
    return default if flag is None else flag


def _bank(args, config: Config, seed: int):
    return bank_from_settings(
        seed,
        layers=_pick(args.layers, config.extractor_layers if args.channels is None else len(args.channels)),
        channels=_pick(args.channels, config.extractor_channels),
        kernel_size=_pick(args.kernel_size, config.kernel_size),
        stride=_pick(args.stride, config.stride),
    )


def cmd_extract_features(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    bank = _bank(args, config, seed)
    dataset = load_dataset(args.input, DatasetKind.IMAGES)
    matrix = dataset_channel_means(bank, dataset, jobs)
    write_feature_dump(matrix, args.output)

    payload = {
        "output": args.output,
        "n_images": matrix.n_images,
        "n_channels": matrix.n_channels,
        "source_tag": matrix.source_tag,
        "checksum": bank.checksum(),
    }
    printer.emit("FEATURES EXTRACTED", payload, [
        f"Images: {matrix.n_images}",
        f"Channels: {matrix.n_channels}",
        f"Extractor: {bank.describe()}",
        f"Output: {args.output}",
    ])
    return 0


def cmd_shift(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    report = representation_shift(read_feature_dump(args.source), read_feature_dump(args.target), jobs)
    payload = report.to_dict()
    if args.report:
        write_json(payload, args.report)
    printer.emit("REPRESENTATION SHIFT", payload, shift_lines(payload))
    return 0


def cmd_augment(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    op = parse_op_spec(args.op, seed, config.get('augment', {}))
    target = load_dataset(args.input, DatasetKind.IMAGES)
    source = load_dataset(args.ref, DatasetKind.IMAGES) if args.ref else None
    result = apply_to_dataset(op, target, source, args.output, jobs)

    payload = {"op": op.descriptor(), "input": args.input, "output": args.output, "n_images": len(result)}
    printer.emit("AUGMENTATION APPLIED", payload, [
        f"Operator: {op.descriptor()}",
        f"Images: {len(result)}",
        f"Output: {args.output}",
    ])
    return 0


def cmd_construct(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    interval = ShiftInterval.parse(args.interval)
    ops = parse_op_list(args.ops, seed, config.get('augment', {}))
    source = load_dataset(args.source, DatasetKind.IMAGES)
    target = load_dataset(args.target, DatasetKind.IMAGES)
    bank = _bank(args, config, seed)
    source_features = read_feature_dump(args.features_from) if args.features_from else None

    report = construct_dataset(interval, source, target, ops, bank, args.output, jobs,
                               return_last=args.return_last, source_features=source_features)
    payload = report.to_dict()
    if args.report:
        write_json(payload, args.report)
    printer.emit("DATASET CONSTRUCTION", payload, construction_lines(payload))

    if report.status == ConstructionStatus.NOT_FOUND:
        raise ConstructionNotFound(
            f"no operation gave a shift inside ({interval.low:g}, {interval.high:g})", report
        )
    return 0


def cmd_boxes_from_masks(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    components = ComponentExtractionConfig(
        connectivity=_pick(args.connectivity, config.connectivity),
        min_area=_pick(args.min_area, config.min_area),
    )
    masks = load_dataset(args.masks, DatasetKind.MASKS)
    boxes = boxes_for_dataset(masks, components, _pick(args.classes, config.num_classes), jobs)
    write_boxes(boxes, args.output)

    total = sum(len(b) for b in boxes.values())
    payload = {"output": args.output, "n_masks": len(masks), "n_boxes": total}
    printer.emit("BOXES EXTRACTED", payload, [
        f"Masks: {len(masks)}",
        f"Boxes: {total}",
        f"Connectivity: {components.connectivity}, min area: {components.min_area}",
        f"Output: {args.output}",
    ])
    return 0


def cmd_pseudo_labels(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    grabcut = GrabCutConfig(
        gmm_components=_pick(args.components, config.gmm_components),
        max_iterations=_pick(args.iters, config.max_iterations),
        gamma=_pick(args.gamma, config.gamma),
        convergence_eps=config.convergence_eps,
        seed=seed,
    )
    images = load_dataset(args.images, DatasetKind.IMAGES)
    boxes = read_boxes(args.boxes)
    result = pseudo_label_dataset(images, boxes, args.output, grabcut,
                                  _pick(args.classes, config.num_classes), jobs)

    payload = {"output": args.output, "n_images": len(result), "n_boxes": sum(len(b) for b in boxes.values())}
    printer.emit("PSEUDO-LABELS WRITTEN", payload, [
        f"Images: {len(result)}",
        f"Boxes: {payload['n_boxes']}",
        f"GrabCut: {grabcut.max_iterations} iterations, gamma {grabcut.gamma:g}, "
        f"{grabcut.gmm_components} components",
        f"Output: {args.output}",
    ])
    return 0


def cmd_miou(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    num_classes = _pick(args.classes, config.num_classes)
    gt = load_dataset(args.gt, DatasetKind.MASKS)
    pred = load_dataset(args.pred, DatasetKind.MASKS)
    cm = evaluate_datasets(gt, pred, num_classes, jobs)
    result = miou(cm, absent_as_zero=args.absent_as_zero or config.absent_as_zero)

    payload = result.to_dict()
    printer.emit("MEAN INTERSECTION OVER UNION", payload, miou_lines(payload))
    return 0


def cmd_correlate(args, config: Config, printer: ResultPrinter, seed: int, jobs: int) -> int:
    points = read_points(args.pairs)
    result = regress(points)
    if args.plot:
        plot_regression(points, result.slope, result.intercept, result.pearson_r, args.plot)

    payload = result.to_dict()
    printer.emit("SHIFT / mIoU REGRESSION", payload, regression_lines(payload))
    return 0


COMMANDS: Dict[str, Callable[..., int]] = {
    'extract-features': cmd_extract_features,
    'shift': cmd_shift,
    'augment': cmd_augment,
    'construct': cmd_construct,
    'boxes-from-masks': cmd_boxes_from_masks,
    'pseudo-labels': cmd_pseudo_labels,
    'miou': cmd_miou,
    'correlate': cmd_correlate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on data/parameter errors (including a construction
        that found nothing), 2 on usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (None, 0) else 2

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )

    try:
        config = Config(args.config)
        config.validate()
        seed = _pick(args.seed, config.seed)
        jobs = _pick(args.jobs, config.jobs)
        if seed >= 2 ** 64:
            raise ValidationError(f"seed must fit in 64 bits, got {seed}")

        logger.info(f"Running {args.command} (seed={seed}, jobs={jobs})")
        return COMMANDS[args.command](args, config, ResultPrinter(args.json), seed, jobs)
    except (DomainShiftError, OSError, ValueError) as e:
        message = str(e).replace('\n', '; ')
        print(f"error: {message}", file=sys.stderr)
        return 1


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == '__main__':
    main()
