import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepmot import autodiff as ad
from deepmot.geometry import (
    Box, FrameDims, boxes_array, distance_matrix, distance_matrix_diff, iou, iou_matrix,
    pair_distance, pair_distance_batch,
)

coord = st.floats(-50, 150, allow_nan=False)
extent = st.floats(0, 80, allow_nan=False)
boxes = st.builds(Box, coord, coord, extent, extent)


class TestBox:
    def test_center_and_area(self):
        b = Box(10, 20, 4, 6)
        assert b.center == (12.0, 23.0)
        assert b.area == 24.0

    def test_negative_extent_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, -1, 2)

    def test_frame_dims_must_be_positive(self):
        with pytest.raises(ValueError):
            FrameDims(0, 10)
        assert FrameDims(3, 4).diagonal == 5.0

    def test_boxes_array_accepts_mixed_inputs(self):
        arr = boxes_array([Box(1, 2, 3, 4), (5, 6, 7, 8)])
        np.testing.assert_array_equal(arr, [[1, 2, 3, 4], [5, 6, 7, 8]])


class TestIou:
    def test_identical(self):
        assert iou(Box(3, 4, 5, 6), Box(3, 4, 5, 6)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(5, 5, 1, 1)) == 0.0

    def test_half_overlap(self):
        # intersection 2, union 6
        assert iou(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)

    def test_degenerate_union(self):
        assert iou(Box(1, 1, 0, 0), Box(1, 1, 0, 0)) == 0.0

    @given(boxes, boxes)
    def test_range_and_symmetry(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)

    def test_matrix_matches_scalar(self, rng):
        a = [Box(*rng.uniform(0, 50, 2), *rng.uniform(1, 30, 2)) for _ in range(5)]
        b = [Box(*rng.uniform(0, 50, 2), *rng.uniform(1, 30, 2)) for _ in range(3)]
        expected = [[iou(x, y) for y in b] for x in a]
        np.testing.assert_allclose(iou_matrix(a, b), expected, atol=1e-15)


class TestPairDistance:
    def test_identical_is_zero(self, dims):
        assert pair_distance(Box(10, 10, 5, 5), Box(10, 10, 5, 5), dims) == 0.0

    def test_hand_value(self, dims):
        expected = (1 / math.sqrt(20000) + 2 / 3) / 2
        assert pair_distance(Box(0, 0, 2, 2), Box(1, 0, 2, 2), dims) == pytest.approx(expected, abs=1e-15)

    def test_opposite_corner_points_approach_one(self, dims):
        d = pair_distance(Box(0, 0, 1e-9, 1e-9), Box(100, 100, 1e-9, 1e-9), dims)
        assert d == pytest.approx(1.0, abs=1e-8)

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        dims = FrameDims(100, 100)
        assume_inside = all(0 <= v <= 100 for v in (*a.center, *b.center))
        d = pair_distance(a, b, dims)
        assert d == pair_distance(b, a, dims)
        if assume_inside:
            assert 0.0 <= d <= 1.0


class TestDistanceMatrix:
    def test_single_identical(self, dims):
        np.testing.assert_array_equal(distance_matrix([Box(1, 2, 3, 4)], [Box(1, 2, 3, 4)], dims), [[0.0]])

    def test_zero_diagonal(self, rng, dims):
        b = np.column_stack([rng.uniform(0, 70, (4, 2)), rng.uniform(5, 30, (4, 2))])
        D = distance_matrix(b, b, dims)
        np.testing.assert_array_equal(np.diag(D), 0.0)

    def test_matches_per_pair_oracle(self, rng, dims):
        tracks = [Box(*rng.uniform(0, 70, 2), *rng.uniform(5, 30, 2)) for _ in range(3)]
        objs = [Box(*rng.uniform(0, 70, 2), *rng.uniform(5, 30, 2)) for _ in range(4)]
        D = distance_matrix(tracks, objs, dims)
        assert D.shape == (3, 4)
        np.testing.assert_allclose(D, pair_distance_batch(tracks, objs, dims), atol=1e-15)
        assert ((0 <= D) & (D <= 1)).all()

    def test_diff_matches_numpy(self, rng, dims):
        a = np.column_stack([rng.uniform(0, 70, (3, 2)), rng.uniform(5, 30, (3, 2))])
        b = np.column_stack([rng.uniform(0, 70, (2, 2)), rng.uniform(5, 30, (2, 2))])
        np.testing.assert_allclose(distance_matrix_diff(a, b, dims).data, distance_matrix(a, b, dims), atol=1e-14)

    @pytest.mark.parametrize("n,m", [(0, 2), (2, 0)])
    def test_empty_side_rejected(self, dims, n, m):
        with pytest.raises(ValueError):
            distance_matrix(np.zeros((n, 4)), np.ones((m, 4)), dims)
        with pytest.raises(ValueError):
            distance_matrix_diff(np.zeros((n, 4)), np.ones((m, 4)), dims)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_at_generic_positions(self, seed, dims):
        rng = np.random.default_rng(seed)
        a = np.column_stack([rng.uniform(10, 40, (2, 2)), rng.uniform(20, 40, (2, 2))])
        b = a + rng.uniform(-8, 8, a.shape)
        weights = rng.random((2, 2))

        def f(t):
            return ad.sum_(distance_matrix_diff(t, b, dims) * weights)

        assert ad.finite_diff_check(f, a, eps=1e-4) < 1e-4
