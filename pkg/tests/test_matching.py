"""Assignment solver against an exhaustive permutation oracle."""

import itertools

import numpy as np
import pytest

from hoidet.boxes import BBox
from hoidet.data import GroundTruthHOI
from hoidet.errors import DataError
from hoidet.losses import LossWeights
from hoidet.matching import (assignment_cost_matrix, hungarian_match,
                             solve_assignment)


def brute_force_assignment(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Exhaustive minimum over row-permutations; rows >= cols."""
    rows, cols = cost.shape
    best_cost, best = float("inf"), None
    for rows_choice in itertools.permutations(range(rows), cols):
        total = sum(cost[r, c] for c, r in enumerate(rows_choice))
        if total < best_cost:
            best_cost = total
            best = sorted((r, c) for c, r in enumerate(rows_choice))
    return best_cost, best


class TestSolveAssignment:
    def test_diagonal_optimum(self):
        pairs = solve_assignment(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert pairs == [(0, 0), (1, 1)]

    def test_single_gt_best_query(self):
        cost = np.array([[5.0], [3.0], [0.5]])
        assert solve_assignment(cost) == [(2, 0)]

    def test_matches_brute_force_six_by_four(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            cost = rng.random((6, 4))
            got = solve_assignment(cost)
            oracle_cost, oracle = brute_force_assignment(cost)
            got_cost = sum(cost[r, c] for r, c in got)
            assert got_cost == pytest.approx(oracle_cost, abs=1e-12)
            assert got == oracle

    def test_deterministic_across_calls(self):
        rng = np.random.default_rng(0)
        cost = rng.random((5, 5))
        assert solve_assignment(cost) == solve_assignment(cost)


def _fake_outputs(rng, q, num_obj=3, num_rel=4):
    return dict(
        human_boxes=rng.uniform(0.2, 0.8, size=(q, 4)),
        object_boxes=rng.uniform(0.2, 0.8, size=(q, 4)),
        object_logits=rng.normal(size=(q, num_obj + 1)),
        relation_boxes=rng.uniform(0.2, 0.8, size=(q, 4)),
        relation_logits=rng.normal(size=(q, num_rel)),
    )


def _gt(cx=0.4, cy=0.5, cls=1, rels=(0, 2)):
    return GroundTruthHOI(human_box=BBox(cx, cy, 0.2, 0.3),
                          object_box=BBox(cx + 0.2, cy, 0.15, 0.15),
                          object_class=cls, relation_classes=rels)


class TestHungarianMatch:
    def test_perfect_query_wins(self, rng):
        gt = _gt()
        out = _fake_outputs(rng, 3)
        # make query 2 reproduce the ground truth exactly and confidently
        out["human_boxes"][2] = [gt.human_box.cx, gt.human_box.cy,
                                 gt.human_box.w, gt.human_box.h]
        out["object_boxes"][2] = [gt.object_box.cx, gt.object_box.cy,
                                  gt.object_box.w, gt.object_box.h]
        out["relation_boxes"][2] = [gt.relation_box.cx, gt.relation_box.cy,
                                    gt.relation_box.w, gt.relation_box.h]
        out["object_logits"][2] = [0, 20.0, 0, 0]
        out["relation_logits"][2] = [20.0, 0, 20.0, 0]
        result = hungarian_match(**out, gts=[gt], weights=LossWeights())
        assert result.pairs == [(2, 0)]
        assert result.unmatched_queries == [0, 1]

    def test_too_many_gts_rejected(self, rng):
        out = _fake_outputs(rng, 2)
        with pytest.raises(DataError):
            hungarian_match(**out, gts=[_gt(), _gt(0.5), _gt(0.6)],
                            weights=LossWeights())

    def test_no_gts_all_unmatched(self, rng):
        out = _fake_outputs(rng, 4)
        result = hungarian_match(**out, gts=[], weights=LossWeights())
        assert result.pairs == []
        assert result.unmatched_queries == [0, 1, 2, 3]

    def test_injective_both_ways(self, rng):
        gts = [_gt(0.3), _gt(0.5, cls=2), _gt(0.7, rels=(1,))]
        out = _fake_outputs(rng, 6)
        result = hungarian_match(**out, gts=gts, weights=LossWeights())
        queries = [q for q, _ in result.pairs]
        gts_idx = [g for _, g in result.pairs]
        assert len(set(queries)) == len(queries) == 3
        assert sorted(gts_idx) == [0, 1, 2]
        assert sorted(queries + result.unmatched_queries) == list(range(6))

    def test_cost_matrix_shape_and_terms(self, rng):
        gts = [_gt(0.3), _gt(0.6, cls=0)]
        out = _fake_outputs(rng, 5)
        cost = assignment_cost_matrix(out["human_boxes"], out["object_boxes"],
                                      out["object_logits"], out["relation_boxes"],
                                      out["relation_logits"], gts, LossWeights())
        assert cost.shape == (5, 2)
        # raising a query's probability of the right class lowers its cost
        out["object_logits"][1, gts[0].object_class] += 10.0
        cost2 = assignment_cost_matrix(out["human_boxes"], out["object_boxes"],
                                       out["object_logits"], out["relation_boxes"],
                                       out["relation_logits"], gts, LossWeights())
        assert cost2[1, 0] < cost[1, 0]
