import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from welane.assignloss import (CostWeights, Grid, LossWeights, assignment_cost, default_liou_radius,
                               dynamic_k, dynamic_topk_assign, focal_cost, line_iou, line_iou_xs,
                               pairwise_line_iou, sim_cost, similarity, smooth_l1, total_loss)
from welane.errors import ConfigError, UndefinedOverlap
from welane.lanegeom import GtLane, LanePrior, line_prior, native_rows, prior_from_gt

H, W, N = 590, 1640, 72


@pytest.fixture
def grid():
    return Grid.make(native_rows(N, H), W, H)


def test_line_iou_examples():
    assert line_iou_xs([0.0], [30.0], 15) == 0.0
    assert line_iou_xs([0.0], [90.0], 15) == (30 - 90) / (30 + 90) == -0.5
    x = np.linspace(0, 100, 20)
    assert line_iou_xs(x, x, 15) == 1.0


def test_line_iou_no_common_row():
    with pytest.raises(UndefinedOverlap):
        line_iou_xs([np.nan, 1.0], [2.0, np.nan], 15)


def test_line_iou_random_pairs_match_segment_oracle(rng):
    for _ in range(1000):
        xa = rng.integers(-50, W + 50, size=N).astype(float)
        xb = rng.integers(-50, W + 50, size=N).astype(float)
        xa[rng.random(N) < 0.3] = np.nan
        xb[rng.random(N) < 0.3] = np.nan
        e = float(rng.integers(1, 40))
        ref = oracles.segment_iou(xa, xb, e)
        if ref is None:
            with pytest.raises(UndefinedOverlap):
                line_iou_xs(xa, xb, e)
        else:
            assert line_iou_xs(xa, xb, e) == ref


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, 12, elements=st.floats(-500, 2000)),
       hnp.arrays(np.float64, 12, elements=st.floats(-500, 2000)), st.floats(0.5, 50))
def test_line_iou_symmetric_and_bounded(xa, xb, e):
    ab, ba = line_iou_xs(xa, xb, e), line_iou_xs(xb, xa, e)
    assert abs(ab - ba) <= 1e-12
    assert -1.0 <= ab <= 1.0
    if np.abs(xa - xb).max() > 1e-9:
        assert ab < 1.0
    else:
        assert ab == pytest.approx(1.0)


def test_line_iou_on_lane_objects(grid):
    gt = GtLane([[300, 589], [500, 300]])
    p = prior_from_gt(gt, H, N)
    assert line_iou(p, gt, 15, grid) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        line_iou(p, gt, 15)


def test_pairwise_marks_missing_overlap(grid):
    top = GtLane([[100, 100], [120, 0]])
    bottom = line_prior(100, 589, 1.2, 100, H, N)
    assert pairwise_line_iou([bottom], [top], grid, 15).tolist() == [[-1.0]]


def test_default_radius():
    assert default_liou_radius(800) == 15
    assert default_liou_radius(1640) == pytest.approx(30.75)


def test_similarity_examples(grid):
    assert similarity(0.5, 0.5, 0.5) == 0.125 ** 2 == 0.015625
    gt = GtLane([[300, 589], [500, 300]])
    sc = sim_cost(prior_from_gt(gt, H, N), gt, grid)
    assert sc.c_dis == pytest.approx(0, abs=1e-12) and sc.c_xy == 0 and sc.c_theta == pytest.approx(0)
    assert sc.c_sim == pytest.approx(0, abs=1e-20)


def test_theta_difference_pi_is_one(grid):
    gt = GtLane([[300, 589], [300, 300]])  # theta = pi/2
    p = LanePrior(300, 589, math.pi / 2 + math.pi, 289, np.full(N, 300.0))
    assert sim_cost(p, gt, grid).c_theta == 1.0


def test_no_common_rows_maximal_distance(grid):
    gt = GtLane([[100, 100], [120, 0]])
    sc = sim_cost(line_prior(100, 589, 1.2, 100, H, N), gt, grid)
    assert sc.c_dis == 1.0 and not sc.overlap


_COMPONENT = st.one_of(st.just(0.0), st.floats(1e-50, 1.0))


@settings(max_examples=60, deadline=None)
@given(_COMPONENT, _COMPONENT, _COMPONENT)
def test_similarity_properties(a, b, c):
    s = similarity(a, b, c)
    assert 0.0 <= s <= 1.0
    assert (s == 0.0) == (a * b * c == 0.0)


def test_focal_examples():
    lw = LossWeights(focal_alpha=0.5, focal_gamma=0.0)
    assert focal_cost(0.5, True, lw) == pytest.approx(0.5 * math.log(2), abs=1e-12)
    assert focal_cost(1.0, True) < 1e-20
    assert focal_cost(0.9, True) == pytest.approx(0.25 * 0.01 * -math.log(0.9), rel=1e-12)
    assert focal_cost(0.9, True) == pytest.approx(2.634e-4, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(0.01, 0.99))
def test_focal_gamma_zero_is_cross_entropy(p, alpha):
    lw = LossWeights(focal_alpha=alpha, focal_gamma=0.0)
    assert abs(focal_cost(p, True, lw) - (-alpha * math.log(p))) <= 1e-12
    assert abs(focal_cost(p, False, lw) - (-(1 - alpha) * math.log(1 - p))) <= 1e-12


def test_cost_matrix_matches_scalar_oracle(grid, rng):
    lw = LossWeights()
    for _ in range(10):
        gts_pts = [((float(rng.uniform(200, 1400)), 589.0), (float(rng.uniform(600, 1000)), 250.0))
                   for _ in range(2)]
        gts = [GtLane(list(p)) for p in gts_pts]
        geoms = [(float(rng.uniform(0, W)), 589.0, float(rng.uniform(0.3, 2.8)), float(rng.uniform(100, 500)))
                 for _ in range(2)]
        scores = rng.uniform(0.05, 0.95, size=2)
        preds = [line_prior(*g, H, N, score=float(s)) for g, s in zip(geoms, scores)]
        cm = assignment_cost(preds, gts, CostWeights(), lw, grid)
        for i in range(2):
            for j in range(2):
                ref = oracles.straight_lane_cost(geoms[i], gts_pts[j], float(scores[i]), grid.rows, W, H)
                assert abs(cm.cost[i, j] - ref) < 1e-9


def test_cost_monotone_in_distance(grid):
    gt = GtLane([[800, 589], [800, 200]])
    costs = []
    for dx in (0, 10, 40, 160):
        p = LanePrior(800.5, 589, 1.5, 389, np.full(N, 800.0 + dx), 0.6)
        costs.append(assignment_cost([p], [gt], CostWeights(), LossWeights(), grid).cost[0, 0])
    assert costs == sorted(costs)


def test_assignment_cost_empty(grid):
    with pytest.raises(ConfigError):
        assignment_cost([], [GtLane([[0, 0], [1, 1]])], CostWeights(), LossWeights(), grid)


def test_dynamic_k():
    assert dynamic_k(np.array([0.9, 0.8, 0.7]), 4) == 2
    assert dynamic_k(np.array([-0.5, 0.1]), 4) == 1
    assert dynamic_k(np.full(10, 0.99), 4) == 3
    assert dynamic_k(np.ones(10), 4) == 4


def test_dynamic_topk_example():
    cost = np.array([[0.3], [0.1], [0.2]])
    liou = np.array([[0.9], [0.8], [0.7]])
    assert dynamic_topk_assign(cost, liou, 4) == {0: [1, 2]}


def test_dynamic_topk_empty():
    with pytest.raises(ConfigError):
        dynamic_topk_assign(np.zeros((0, 2)), np.zeros((0, 2)))


def test_top1_exhaustive_on_value_grid():
    liou = np.zeros((3, 3))
    for vals in itertools.product((0.0, 0.5, 1.0), repeat=9):
        cost = np.array(vals).reshape(3, 3)
        assert dynamic_topk_assign(cost, liou, 1) == oracles.lexicographic_assignment(cost)


def test_top1_is_column_argmin_without_conflicts(rng):
    for _ in range(200):
        cost = rng.integers(0, 4, size=(5, 3)).astype(float)
        argmins = [int(np.argmin(cost[:, g])) for g in range(3)]
        if len(set(argmins)) < 3:
            continue
        assert dynamic_topk_assign(cost, np.zeros_like(cost), 1) == {g: [p] for g, p in enumerate(argmins)}


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.data())
def test_assignment_structure(n_pred, n_gt, k_cap, data):
    cost = data.draw(hnp.arrays(np.float64, (n_pred, n_gt), elements=st.floats(0, 2)))
    liou = data.draw(hnp.arrays(np.float64, (n_pred, n_gt), elements=st.floats(-1, 1)))
    out = dynamic_topk_assign(cost, liou, k_cap)
    claimed = [p for ps in out.values() for p in ps]
    assert len(claimed) == len(set(claimed))
    for g, ps in out.items():
        assert len(ps) <= dynamic_k(liou[:, g], k_cap)
        if n_pred >= n_gt:
            assert ps


def _perfect(grid, score=1.0):
    gts = [GtLane([[300, 589], [600, 250]]), GtLane([[1300, 589], [1000, 250]])]
    preds = [prior_from_gt(g, H, N, score) for g in gts]
    return preds, gts


def test_perfect_prediction_loss(grid):
    preds, gts = _perfect(grid)
    lb = total_loss(preds, gts, {0: [0], 1: [1]}, LossWeights(), grid)
    assert lb.total < 1e-6
    assert lb.l_xytl == 0.0
    assert lb.l_liou == pytest.approx(0.0, abs=1e-12)


def test_loss_is_weighted_sum(grid, rng):
    preds, gts = _perfect(grid, 0.7)
    preds[0].start_x += 40
    preds[1].xs = preds[1].xs + np.where(preds[1].xs > 0, 12.0, 0.0)
    lb = total_loss(preds, gts, {0: [0], 1: [1]}, LossWeights(1, 1, 1), grid)
    assert lb.total == pytest.approx(lb.l_cls + lb.l_xytl + lb.l_liou, abs=1e-15)
    assert 1.0 * 0.2 + 1.0 * 0.1 + 1.0 * 0.3 == pytest.approx(0.6)


def test_smooth_l1_start_residual(grid):
    gt = GtLane([[300, 589], [600, 250]])
    p = prior_from_gt(gt, H, N)
    p.start_x += 0.5 * W
    lb = total_loss([p], [gt], {0: [0]}, LossWeights(), grid)
    assert lb.l_xytl == 0.5 * 0.5 ** 2 == 0.125
    assert smooth_l1(2.0) == 1.5


def test_loss_scaling(grid):
    preds, gts = _perfect(grid, 0.6)
    preds[0].start_y -= 30
    preds[1].theta += 0.2
    a = {0: [0], 1: [1]}
    base = total_loss(preds, gts, a, LossWeights(), grid).total
    for s in (0.25, 2.0, 8.0):
        assert total_loss(preds, gts, a, LossWeights().scaled(s), grid).total == s * base
    for s in (0.3, 7.1):
        assert total_loss(preds, gts, a, LossWeights().scaled(s), grid).total == pytest.approx(s * base, rel=1e-12)


def test_loss_without_positives(grid):
    preds, gts = _perfect(grid, 0.3)
    lw = LossWeights()
    lb = total_loss(preds, gts, {0: [], 1: []}, lw, grid)
    assert lb.l_xytl == lb.l_liou == 0.0
    assert lb.total == lw.w_cls * lb.l_cls
    assert lb.l_cls == pytest.approx(focal_cost(0.3, False, lw))


def test_loss_uses_maximal_liou_without_overlap(grid):
    gt = GtLane([[100, 100], [120, 0]])
    p = line_prior(100, 589, 1.2, 100, H, N)
    assert total_loss([p], [gt], {0: [0]}, LossWeights(), grid).l_liou == 2.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, W), st.floats(0.2, 2.9), st.floats(0, 1)), min_size=1, max_size=4))
def test_loss_non_negative(specs):
    grid = Grid.make(native_rows(N, H), W, H)
    gts = [GtLane([[500, 589], [700, 250]])]
    preds = [line_prior(sx, 589, th, 300, H, N, score=s) for sx, th, s in specs]
    lb = total_loss(preds, gts, {0: [0]}, LossWeights(), grid)
    assert lb.total >= 0 and lb.l_cls >= 0 and lb.l_xytl >= 0 and lb.l_liou >= 0
