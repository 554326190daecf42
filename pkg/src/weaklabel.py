"""
Weak-label tooling.

Boxes are derived from semantic masks by class-wise connected components.
Pseudo-masks are derived from boxes with an iterative GrabCut: two color
GMMs (foreground/background) alternate with a graph min-cut, and the
per-box results are composited so that smaller boxes are painted in front.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from sklearn.cluster import KMeans

from src.core import (
    IGNORE_LABEL,
    DatasetHandle,
    DatasetKind,
    ImageRaster,
    LabeledBox,
    PathLike,
    SegMask,
    load_dataset,
    parallel_map,
    prepare_output_dir,
    read_image,
    read_mask,
    write_mask,
)
from src.errors import DatasetError, DomainShiftError, ValidationError
from src.graphcut import cut_energy_pairwise, grid_cut, pairwise_weights

logger = logging.getLogger(__name__)

COVARIANCE_FLOOR = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ComponentExtractionConfig:
    connectivity: int = 8
    min_area: int = 64

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_area < 1:
            raise ValidationError(f"min_area must be at least 1, got {self.min_area}")


@dataclass(frozen=True)
class GrabCutConfig:
    gmm_components: int = 5
    max_iterations: int = 5
    gamma: float = 50.0
    convergence_eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.gmm_components < 1:
            raise ValidationError(f"gmm_components must be at least 1, got {self.gmm_components}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.convergence_eps < 0:
            raise ValidationError(f"convergence_eps must be non-negative, got {self.convergence_eps}")


@dataclass(frozen=True, eq=False)
class GrabCutResult:
    """Foreground map of one box plus the energy trace.

    energies[0] is the energy of the initial labeling under the first color
    models; energies[i] is the energy after the i-th cut.
    """

    foreground: np.ndarray = field(repr=False)
    energies: Tuple[float, ...] = ()
    iterations: int = 0

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.foreground))


# Boxes from masks

def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def boxes_from_mask(mask: SegMask, config: Optional[ComponentExtractionConfig] = None) -> List[LabeledBox]:
    """
    Tight bounding boxes of every connected component of every class.

    Components smaller than config.min_area are dropped; 255 is never a
    class. Output is sorted by (class_id, y_min, x_min).
    """
    config = config or ComponentExtractionConfig()
    structure = _structure(config.connectivity)
    labels = np.asarray(mask.labels)

    boxes = []
    for class_id in np.unique(labels):
        if class_id == IGNORE_LABEL:
            continue
        components, count = ndimage.label(labels == class_id, structure=structure)
        if count == 0:
            continue
        areas = np.bincount(components.ravel(), minlength=count + 1)
        for index, found in enumerate(ndimage.find_objects(components), start=1):
            if found is None or areas[index] < config.min_area:
                continue
            rows, cols = found
            boxes.append(LabeledBox(int(class_id), cols.start, rows.start, cols.stop - 1, rows.stop - 1))

    boxes.sort(key=lambda b: (b.class_id, b.y_min, b.x_min, b.y_max, b.x_max))
    return boxes


def boxes_for_dataset(masks: DatasetHandle, config: Optional[ComponentExtractionConfig] = None,
                      num_classes: int = 19, jobs: int = 1) -> Dict[str, List[LabeledBox]]:
    """Boxes for every mask in a dataset, keyed by stem in entry order."""
    if masks.kind != DatasetKind.MASKS:
        raise ValidationError(f"dataset {masks.root} holds {masks.kind.value}, not masks")

    def _one(stem: str) -> List[LabeledBox]:
        try:
            return boxes_from_mask(read_mask(masks.path_of(stem), num_classes), config)
        except (DomainShiftError, OSError) as e:
            raise DatasetError(f"{stem}: {e}") from e

    results = parallel_map(_one, masks.entries, jobs)
    boxes = dict(zip(masks.entries, results))
    logger.info(f"Extracted {sum(len(b) for b in results)} boxes from {len(masks)} masks")
    return boxes


# Color models

@dataclass(frozen=True, eq=False)
class ColorModel:
    """Full-covariance Gaussian mixture over RGB values in [0, 1]."""

    weights: np.ndarray
    means: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def learn(cls, samples: np.ndarray, assignment: np.ndarray, n_components: int) -> 'ColorModel':
        """
        Maximum-likelihood parameters for a fixed sample-to-component assignment.

        Covariance eigenvalues are floored at COVARIANCE_FLOOR; empty
        components get zero weight.
        """
        counts = np.bincount(assignment, minlength=n_components).astype(np.float64)
        weights = counts / counts.sum()
        means = np.zeros((n_components, 3))
        eigenvalues = np.full((n_components, 3), COVARIANCE_FLOOR)
        eigenvectors = np.tile(np.eye(3), (n_components, 1, 1))

        for k in range(n_components):
            members = samples[assignment == k]
            if members.shape[0] == 0:
                continue
            means[k] = members.mean(axis=0)
            centered = members - means[k]
            covariance = centered.T @ centered / members.shape[0]
            values, vectors = np.linalg.eigh(covariance)
            eigenvalues[k] = np.maximum(values, COVARIANCE_FLOOR)
            eigenvectors[k] = vectors

        return cls(weights, means, eigenvalues, eigenvectors)

    def component_costs(self, samples: np.ndarray) -> np.ndarray:
        """N×K negative log of weight times Gaussian density; inf for empty components."""
        costs = np.empty((samples.shape[0], self.n_components))
        for k in range(self.n_components):
            if self.weights[k] == 0:
                costs[:, k] = np.inf
                continue
            projected = (samples - self.means[k]) @ self.eigenvectors[k]
            mahalanobis = np.sum(projected ** 2 / self.eigenvalues[k], axis=1)
            costs[:, k] = (
                -math.log(self.weights[k])
                + 0.5 * float(np.sum(np.log(self.eigenvalues[k])))
                + 1.5 * _LOG_2PI
                + 0.5 * mahalanobis
            )
        return costs

    def costs(self, samples: np.ndarray) -> np.ndarray:
        """Per-sample cost of the best component."""
        return self.component_costs(samples).min(axis=1)

    def assign(self, samples: np.ndarray) -> np.ndarray:
        return self.component_costs(samples).argmin(axis=1)


def _initial_model(samples: np.ndarray, n_components: int, seed: int) -> ColorModel:
    """k-means initialization; k never exceeds the number of distinct colors."""
    k = min(n_components, np.unique(samples, axis=0).shape[0])
    if k == 1:
        assignment = np.zeros(samples.shape[0], dtype=np.int64)
    else:
        assignment = KMeans(n_clusters=k, n_init=1, random_state=seed % 2 ** 32).fit(samples).labels_
    return ColorModel.learn(samples, np.asarray(assignment, dtype=np.int64), k)


def _box_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


# GrabCut

def _energy(unary_fg: np.ndarray, unary_bg: np.ndarray, foreground: np.ndarray, weights) -> float:
    unary = np.where(foreground, unary_fg, unary_bg)
    return math.fsum(unary.ravel().tolist()) + cut_energy_pairwise(foreground, weights)


def grabcut_box(image: ImageRaster, box: LabeledBox, config: Optional[GrabCutConfig] = None,
                seed: Optional[int] = None) -> GrabCutResult:
    """
    Extract the foreground inside one box.

    Pixels outside the box are pinned to background; pixels inside start as
    probable foreground. Each iteration reassigns mixture components, refits
    both color models, and solves one min-cut. Iteration stops after
    config.max_iterations cuts, when the relative energy decrease falls
    below config.convergence_eps, or when the foreground becomes empty.

    Returns:
        GrabCutResult whose foreground is an H×W boolean map that is False
        everywhere outside the box.
    """
    config = config or GrabCutConfig()
    seed = config.seed if seed is None else seed
    box.check_within(image.width, image.height)

    height, width = image.height, image.width
    inside = np.zeros((height, width), dtype=bool)
    inside[box.slices()] = True
    if inside.all():
        logger.debug("Box covers the whole image; no background constraint, all foreground")
        return GrabCutResult(inside, (), 0)

    z = np.asarray(image.pixels, dtype=np.float64) / 255.0
    flat = z.reshape(-1, 3)
    pinned = ~inside

    weights = pairwise_weights(z, config.gamma)
    # beats the total pairwise weight any pixel can save by leaving background
    hard = 8.0 * config.gamma + 1.0

    foreground = inside.copy()
    fg_model = _initial_model(flat[foreground.ravel()], config.gmm_components, seed)
    bg_model = _initial_model(flat[~foreground.ravel()], config.gmm_components, seed)

    def _unaries() -> Tuple[np.ndarray, np.ndarray]:
        return fg_model.costs(flat).reshape(height, width), bg_model.costs(flat).reshape(height, width)

    unary_fg, unary_bg = _unaries()
    energies = [_energy(unary_fg, unary_bg, foreground, weights)]
    iterations = 0

    while iterations < config.max_iterations:
        if iterations > 0:
            fg_samples, bg_samples = flat[foreground.ravel()], flat[~foreground.ravel()]
            fg_model = ColorModel.learn(fg_samples, fg_model.assign(fg_samples), fg_model.n_components)
            bg_model = ColorModel.learn(bg_samples, bg_model.assign(bg_samples), bg_model.n_components)
            unary_fg, unary_bg = _unaries()

        floor = np.minimum(unary_fg, unary_bg)
        source_caps = np.where(pinned, 0.0, unary_bg - floor)
        sink_caps = np.where(pinned, hard, unary_fg - floor)
        foreground, _ = grid_cut(source_caps, sink_caps, weights)
        foreground &= inside
        iterations += 1

        energies.append(_energy(unary_fg, unary_bg, foreground, weights))
        logger.debug(f"GrabCut iteration {iterations}: energy {energies[-1]:.6g}, "
                     f"foreground {int(foreground.sum())} px")

        if not foreground.any():
            break
        previous = energies[-2]
        if previous - energies[-1] <= config.convergence_eps * abs(previous):
            break

    return GrabCutResult(foreground, tuple(energies), iterations)


def pseudo_label(image: ImageRaster, boxes: Sequence[LabeledBox], config: Optional[GrabCutConfig] = None,
                 num_classes: int = 19) -> SegMask:
    """
    Composite per-box GrabCut foregrounds into one mask.

    Boxes are painted in decreasing area order so smaller boxes end up in
    front; on equal areas the box listed earlier wins. Pixels claimed by no
    box are 255.
    """
    config = config or GrabCutConfig()
    for box in boxes:
        box.check_within(image.width, image.height, num_classes)

    labels = np.full((image.height, image.width), IGNORE_LABEL, dtype=np.uint8)
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].area, -i))
    for index in order:
        box = boxes[index]
        result = grabcut_box(image, box, config, seed=_box_seed(config.seed, index))
        labels[result.foreground] = box.class_id
    return SegMask(labels, num_classes)


def pseudo_label_dataset(images: DatasetHandle, boxes: Mapping[str, Sequence[LabeledBox]], out_root: PathLike,
                         config: Optional[GrabCutConfig] = None, num_classes: int = 19,
                         jobs: int = 1) -> DatasetHandle:
    """
    Write one pseudo-mask PNG per image under out_root.

    Images without boxes get an all-255 mask; boxes for stems that are not in
    the image dataset are an error.
    """
    if images.kind != DatasetKind.IMAGES:
        raise ValidationError(f"dataset {images.root} holds {images.kind.value}, not images")
    unknown = sorted(set(boxes) - set(images.entries))
    if unknown:
        raise DatasetError(f"box file names stems missing from {images.root}: {unknown[:5]}")

    config = config or GrabCutConfig()
    out_root = prepare_output_dir(out_root, [images.root])

    def _one(stem: str) -> None:
        try:
            image = read_image(images.path_of(stem))
            mask = pseudo_label(image, list(boxes.get(stem, [])), config, num_classes)
        except (DomainShiftError, OSError) as e:
            raise DatasetError(f"{stem}: {e}") from e
        write_mask(mask, out_root / f"{stem}.png")

    logger.info(f"Generating pseudo-labels for {len(images)} images "
                f"({sum(len(b) for b in boxes.values())} boxes)")
    parallel_map(_one, images.entries, jobs)
    return load_dataset(out_root, DatasetKind.MASKS)
