"""
Tests for the min-cut wrappers, checked against exhaustive enumeration.
"""

import itertools
import math

import numpy as np
import pytest

from src.errors import ValidationError
from src.graphcut import cut_energy_pairwise, grid_cut, min_cut, pairwise_weights


def cut_value(edges, side):
    return sum(c for u, v, c in edges if u in side and v not in side)


def brute_force_min_cut(n_nodes, edges, source, sink):
    inner = [node for node in range(n_nodes) if node not in (source, sink)]
    best = math.inf
    for bits in itertools.product((False, True), repeat=len(inner)):
        side = {source} | {node for node, on in zip(inner, bits) if on}
        best = min(best, cut_value(edges, side))
    return best


def random_graph(rng):
    n_nodes = int(rng.integers(2, 13))
    n_edges = int(rng.integers(0, 3 * n_nodes))
    edges = []
    for _ in range(n_edges):
        u, v = (int(x) for x in rng.integers(0, n_nodes, size=2))
        if rng.random() < 0.5:
            capacity = float(rng.integers(0, 10))
        else:
            capacity = float(rng.uniform(0, 5))
        edges.append((u, v, capacity))
    return n_nodes, edges


class TestMinCut:

    def test_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_nodes, edges = random_graph(rng)
            source, sink = 0, n_nodes - 1
            result = min_cut(n_nodes, edges, source, sink)
            assert result.value == pytest.approx(brute_force_min_cut(n_nodes, edges, source, sink), abs=1e-9)
            # the reported partition realizes the value
            assert source in result.source_side and sink not in result.source_side
            assert cut_value(edges, result.source_side) == pytest.approx(result.value, abs=1e-9)

    def test_two_node_graph(self):
        result = min_cut(2, [(0, 1, 3.5), (0, 1, 1.5), (1, 0, 9.0)], 0, 1)
        assert result.value == 5.0
        assert result.source_side == frozenset({0})

    def test_chain_bottleneck(self):
        result = min_cut(4, [(0, 1, 5.0), (1, 2, 1.0), (2, 3, 5.0)], 0, 3)
        assert result.value == 1.0
        assert result.source_side == frozenset({0, 1})

    def test_disconnected(self):
        assert min_cut(3, [(0, 1, 2.0)], 0, 2).value == 0.0

    def test_invalid_terminals(self):
        with pytest.raises(ValidationError):
            min_cut(3, [], 1, 1)
        with pytest.raises(ValidationError):
            min_cut(3, [], 0, 3)

    def test_negative_capacity(self):
        with pytest.raises(ValidationError):
            min_cut(3, [(0, 1, -1.0)], 0, 2)


class TestPairwiseWeights:

    def test_flat_image(self):
        weights = dict(pairwise_weights(np.zeros((3, 4, 3)), gamma=10.0))
        assert weights[(0, 1)][:, :3].tolist() == [[10.0] * 3] * 3
        assert weights[(0, 1)][:, 3].tolist() == [0.0] * 3
        assert weights[(1, 1)][0, 0] == pytest.approx(10.0 / math.sqrt(2.0))
        assert weights[(1, -1)][0, 0] == 0.0
        assert weights[(1, -1)][0, 1] == pytest.approx(10.0 / math.sqrt(2.0))
        assert np.all(weights[(1, 0)][2] == 0.0)

    def test_edges_across_contrast_are_cheap(self):
        image = np.zeros((4, 4, 3))
        image[:, 2:] = 1.0
        weights = dict(pairwise_weights(image, gamma=1.0))
        assert weights[(0, 1)][0, 1] < weights[(0, 1)][0, 0]
        assert weights[(0, 1)][0, 0] == 1.0

    def test_bounded_by_gamma(self, rng):
        for _, full in pairwise_weights(rng.random((9, 7, 3)), gamma=3.0):
            assert np.all(full >= 0) and np.all(full <= 3.0)

    def test_cut_energy(self):
        weights = pairwise_weights(np.zeros((2, 2, 3)), gamma=1.0)
        labels = np.array([[True, False], [True, False]])
        # two horizontal splits plus both diagonals
        assert cut_energy_pairwise(labels, weights) == pytest.approx(2.0 + 2.0 / math.sqrt(2.0))


class TestGridCut:

    def test_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            height, width = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            source_caps = rng.uniform(0, 3, size=(height, width))
            sink_caps = rng.uniform(0, 3, size=(height, width))
            weights = pairwise_weights(rng.random((height, width, 3)), gamma=float(rng.uniform(0.1, 2)))

            labels, flow = grid_cut(source_caps, sink_caps, weights)

            def energy(fg):
                return float(np.sum(np.where(fg, sink_caps, source_caps))) + cut_energy_pairwise(fg, weights)

            best = min(
                energy(np.array(bits, dtype=bool).reshape(height, width))
                for bits in itertools.product((False, True), repeat=height * width)
            )
            assert flow == pytest.approx(best, abs=1e-9)
            assert energy(labels) == pytest.approx(best, abs=1e-9)

    def test_terminal_only(self):
        labels, flow = grid_cut(np.array([[5.0, 0.0]]), np.array([[1.0, 2.0]]), [])
        assert labels.tolist() == [[True, False]]
        assert flow == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            grid_cut(np.zeros((2, 2)), np.zeros((2, 3)), [])

    def test_negative_capacity(self):
        with pytest.raises(ValidationError):
            grid_cut(np.full((2, 2), -1.0), np.zeros((2, 2)), [])
