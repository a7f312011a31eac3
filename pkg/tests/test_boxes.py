"""Box geometry: hand-computed oracles plus differentiable-path checks."""

import numpy as np
import pytest

from hoidet.autograd import Tensor, backward
from hoidet.boxes import (BBox, boxes_to_array, giou_xyxy, iou, iou_xyxy, outer_box,
                          pairwise_giou, pairwise_l1, t_cxcywh_to_xyxy, t_giou,
                          t_outer_box, t_xyxy_to_cxcywh)

from gradcheck import check_gradients


def random_boxes(rng, n):
    w = rng.uniform(0.1, 0.4, size=n)
    h = rng.uniform(0.1, 0.4, size=n)
    cx = rng.uniform(0.25, 0.75, size=n)
    cy = rng.uniform(0.25, 0.75, size=n)
    return np.stack([cx, cy, w, h], axis=1)


class TestOuterBox:
    def test_idempotent(self):
        b = BBox(0.4, 0.6, 0.2, 0.1)
        u = outer_box(b, b)
        for got, want in zip(u.as_list(), b.as_list()):
            assert got == pytest.approx(want, abs=1e-15)

    def test_hand_geometry(self):
        # xyxy [0,0,.1,.1] union [.7,.7,.9,.9] -> center (.45,.45), w=h=0.9
        a = BBox.from_xyxy(0.0, 0.0, 0.1, 0.1)
        b = BBox.from_xyxy(0.7, 0.7, 0.9, 0.9)
        union = outer_box(a, b)
        assert union.cx == pytest.approx(0.45)
        assert union.cy == pytest.approx(0.45)
        assert union.w == pytest.approx(0.9)
        assert union.h == pytest.approx(0.9)

    def test_commutative(self, rng):
        arr = random_boxes(rng, 20)
        for i in range(0, 20, 2):
            a, b = BBox(*arr[i]), BBox(*arr[i + 1])
            assert outer_box(a, b) == outer_box(b, a)

    def test_contains_both(self, rng):
        arr = random_boxes(rng, 40)
        for i in range(0, 40, 2):
            a, b = BBox(*arr[i]), BBox(*arr[i + 1])
            u = outer_box(a, b)
            ux1, uy1, ux2, uy2 = u.to_xyxy()
            for box in (a, b):
                x1, y1, x2, y2 = box.to_xyxy()
                assert ux1 <= x1 + 1e-12 and uy1 <= y1 + 1e-12
                assert ux2 >= x2 - 1e-12 and uy2 >= y2 - 1e-12


class TestIoU:
    def test_identity(self):
        b = BBox(0.5, 0.5, 0.2, 0.3)
        assert iou(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou(BBox(0.2, 0.2, 0.1, 0.1), BBox(0.8, 0.8, 0.1, 0.1)) == 0.0

    def test_hand_geometry_one_third(self):
        # xyxy [0,0,2,2] vs [1,0,3,2]: inter 2, union 6
        assert iou_xyxy((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)

    def test_degenerate_union_is_zero(self):
        z = BBox(0.5, 0.5, 0.0, 0.0)
        assert iou(z, z) == 0.0


class TestGIoU:
    def test_identity_is_one(self):
        assert giou_xyxy((0, 0, 1, 1), (0, 0, 1, 1)) == pytest.approx(1.0)

    def test_disjoint_is_negative(self):
        assert giou_xyxy((0, 0, 1, 1), (2, 0, 3, 1)) < 0.0

    def test_range(self, rng):
        arr = random_boxes(rng, 60)
        vals = pairwise_giou(arr[:30], arr[30:])
        assert vals.min() >= -1.0 - 1e-12 and vals.max() <= 1.0 + 1e-12

    def test_tensor_matches_float(self, rng):
        a = random_boxes(rng, 10)
        b = random_boxes(rng, 10)
        got = t_giou(Tensor(a), Tensor(b)).data[:, 0]
        expected = [giou_xyxy(BBox(*ra).to_xyxy(), BBox(*rb).to_xyxy())
                    for ra, rb in zip(a, b)]
        assert np.allclose(got, expected, atol=1e-9)


class TestPairwise:
    def test_l1_matches_loops(self, rng):
        a, b = random_boxes(rng, 5), random_boxes(rng, 3)
        got = pairwise_l1(a, b)
        for i in range(5):
            for j in range(3):
                assert got[i, j] == pytest.approx(np.abs(a[i] - b[j]).sum())

    def test_giou_matches_scalar(self, rng):
        a, b = random_boxes(rng, 4), random_boxes(rng, 4)
        got = pairwise_giou(a, b)
        for i in range(4):
            for j in range(4):
                expected = giou_xyxy(BBox(*a[i]).to_xyxy(), BBox(*b[j]).to_xyxy())
                assert got[i, j] == pytest.approx(expected, abs=1e-9)


class TestDifferentiablePaths:
    def test_conversion_roundtrip(self, rng):
        arr = random_boxes(rng, 8)
        back = t_xyxy_to_cxcywh(t_cxcywh_to_xyxy(Tensor(arr)))
        assert np.allclose(back.data, arr, atol=1e-12)

    def test_t_outer_matches_float(self, rng):
        a, b = random_boxes(rng, 12), random_boxes(rng, 12)
        got = t_outer_box(Tensor(a), Tensor(b)).data
        for i in range(12):
            expected = outer_box(BBox(*a[i]), BBox(*b[i]))
            assert np.allclose(got[i], [expected.cx, expected.cy, expected.w, expected.h])

    def test_outer_box_gradient(self, rng):
        a, b = random_boxes(rng, 4), random_boxes(rng, 4)
        downstream = rng.normal(size=(4, 4))
        check_gradients(lambda ts: (t_outer_box(ts[0], ts[1]) * downstream).sum(),
                        [a, b], tol=1e-5)

    def test_giou_gradient(self, rng):
        a, b = random_boxes(rng, 4), random_boxes(rng, 4)
        check_gradients(lambda ts: t_giou(ts[0], ts[1]).sum(), [a, b], tol=1e-5)

    def test_boxes_to_array_roundtrip(self):
        boxes = [BBox(0.1, 0.2, 0.3, 0.4), BBox(0.5, 0.6, 0.7, 0.8)]
        arr = boxes_to_array(boxes)
        assert arr.shape == (2, 4)
        assert np.array_equal(arr[1], [0.5, 0.6, 0.7, 0.8])
