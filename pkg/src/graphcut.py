"""
Minimum s-t cuts on top of PyMaxflow's Boykov-Kolmogorov augmenting-path
solver: a general form for small explicit graphs and a grid form for
image labeling.
"""

import logging
import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import maxflow
import numpy as np

from src.errors import ValidationError

logger = logging.getLogger(__name__)

# (dy, dx, distance) for the forward half of the 8-neighborhood
NEIGHBOR_OFFSETS: Tuple[Tuple[int, int, float], ...] = (
    (0, 1, 1.0),
    (1, 0, 1.0),
    (1, 1, math.sqrt(2.0)),
    (1, -1, math.sqrt(2.0)),
)

Edge = Tuple[int, int, float]


@dataclass(frozen=True)
class CutResult:
    """Value of a minimum s-t cut and the nodes on the source side of it."""

    value: float
    source_side: FrozenSet[int]


def _check_capacity(capacity: float) -> float:
    capacity = float(capacity)
    if not math.isfinite(capacity) or capacity < 0:
        raise ValidationError(f"edge capacities must be finite and non-negative, got {capacity}")
    return capacity


def min_cut(n_nodes: int, edges: Iterable[Edge], source: int, sink: int) -> CutResult:
    """
    Minimum s-t cut of a directed graph given as (u, v, capacity) triples.

    Args:
        n_nodes: Number of nodes; nodes are 0..n_nodes-1, terminals included.
        edges: Directed edges. Parallel edges add up; self loops, edges into
            the source and edges out of the sink never cross an s-t cut and
            are ignored.
        source: Source node id.
        sink: Sink node id.

    Returns:
        CutResult with the cut value (equal to the maximum flow) and the set
        of nodes on the source side, the source itself included.
    """
    if not (0 <= source < n_nodes and 0 <= sink < n_nodes) or source == sink:
        raise ValidationError(f"invalid terminals source={source} sink={sink} for {n_nodes} nodes")

    inner = [node for node in range(n_nodes) if node not in (source, sink)]
    index = {node: i for i, node in enumerate(inner)}

    graph = maxflow.Graph[float]()
    if inner:
        graph.add_nodes(len(inner))

    direct = 0.0
    for u, v, capacity in edges:
        capacity = _check_capacity(capacity)
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise ValidationError(f"edge ({u}, {v}) refers to a node outside 0..{n_nodes - 1}")
        if u == v or v == source or u == sink:
            continue
        if u == source and v == sink:
            direct += capacity
        elif u == source:
            graph.add_tedge(index[v], capacity, 0.0)
        elif v == sink:
            graph.add_tedge(index[u], 0.0, capacity)
        else:
            graph.add_edge(index[u], index[v], capacity, 0.0)

    flow = graph.maxflow() if inner else 0.0
    side = {source}
    side.update(node for node in inner if graph.get_segment(index[node]) == 0)
    return CutResult(value=float(flow) + direct, source_side=frozenset(side))


def pairwise_weights(image: np.ndarray, gamma: float) -> List[Tuple[Tuple[int, int], np.ndarray]]:
    """
    Contrast-sensitive smoothness weights over the 8-neighborhood.

    For each forward offset returns an H×W array whose entry at p is
    gamma * exp(-beta * |z_p - z_q|²) / dist(p, q) for q = p + offset, and
    zero where q falls outside the image. beta = 1 / (2 * mean |z_p - z_q|²)
    over all neighboring pairs; a perfectly flat image gets beta = 0.
    """
    z = np.asarray(image, dtype=np.float64)
    height, width = z.shape[:2]

    differences = []
    total, count = 0.0, 0
    for dy, dx, dist in NEIGHBOR_OFFSETS:
        here, there = _pair_slices(dy, dx, height, width)
        squared = np.sum((z[here] - z[there]) ** 2, axis=-1)
        differences.append(squared)
        total += float(squared.sum())
        count += squared.size

    mean = total / count if count else 0.0
    beta = 1.0 / (2.0 * mean) if mean > 0 else 0.0

    weights = []
    for (dy, dx, dist), squared in zip(NEIGHBOR_OFFSETS, differences):
        here, _ = _pair_slices(dy, dx, height, width)
        full = np.zeros((height, width), dtype=np.float64)
        full[here] = gamma * np.exp(-beta * squared) / dist
        weights.append(((dy, dx), full))
    return weights


def _pair_slices(dy: int, dx: int, height: int, width: int):
    """Slices selecting p and p + (dy, dx) over every in-bounds pair."""
    rows_here = slice(0, height - dy)
    rows_there = slice(dy, height)
    if dx >= 0:
        cols_here, cols_there = slice(0, width - dx), slice(dx, width)
    else:
        cols_here, cols_there = slice(-dx, width), slice(0, width + dx)
    return (rows_here, cols_here), (rows_there, cols_there)


def cut_energy_pairwise(labels: np.ndarray, weights: Sequence[Tuple[Tuple[int, int], np.ndarray]]) -> float:
    """Sum of pairwise weights over neighbor pairs whose labels differ."""
    height, width = labels.shape
    total = 0.0
    for (dy, dx), full in weights:
        here, there = _pair_slices(dy, dx, height, width)
        differ = labels[here] != labels[there]
        total += math.fsum(full[here][differ].tolist())
    return total


def grid_cut(source_caps: np.ndarray, sink_caps: np.ndarray,
             weights: Sequence[Tuple[Tuple[int, int], np.ndarray]]) -> Tuple[np.ndarray, float]:
    """
    Solve a binary labeling on an H×W grid.

    A pixel on the source side pays its sink capacity, a pixel on the sink
    side pays its source capacity, and every neighbor pair split by the cut
    pays its (symmetric) pairwise weight.

    Returns:
        (source_side, flow): boolean H×W map of source-side pixels and the
        max-flow value.
    """
    source_caps = np.asarray(source_caps, dtype=np.float64)
    sink_caps = np.asarray(sink_caps, dtype=np.float64)
    if source_caps.shape != sink_caps.shape or source_caps.ndim != 2:
        raise ValidationError("terminal capacity maps must be equal-shaped 2-D arrays")
    for array in (source_caps, sink_caps):
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise ValidationError("terminal capacities must be finite and non-negative")

    graph = maxflow.Graph[float]()
    node_ids = graph.add_grid_nodes(source_caps.shape)
    for (dy, dx), full in weights:
        structure = np.zeros((3, 3))
        structure[1 + dy, 1 + dx] = 1
        graph.add_grid_edges(node_ids, weights=full, structure=structure, symmetric=True)
    graph.add_grid_tedges(node_ids, source_caps, sink_caps)

    flow = graph.maxflow()
    return ~graph.get_grid_segments(node_ids), float(flow)
