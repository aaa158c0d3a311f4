"""Label assignment cost, dynamic top-k matching and the training loss.

Lanes are compared on a shared :class:`Grid` of image rows. Priors are
sampled with :func:`welane.lanegeom.prior_xs_at`, ground-truth polylines with
:func:`welane.lanegeom.gt_xs_at`; rows where a lane is undefined hold NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UndefinedOverlap
from .lanegeom import GtLane, LanePrior, gt_geometry, gt_xs_at, prior_xs_at

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class Grid:
    """Rows on which lanes are compared, plus the canvas used to normalize."""

    rows: np.ndarray
    width: int
    height: int

    @classmethod
    def make(cls, rows, width, height) -> "Grid":
        return cls(np.asarray(rows, dtype=np.float64), int(width), int(height))

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class CostWeights:
    w_sim: float = 1.0
    w_cls: float = 1.0

    def __post_init__(self):
        if self.w_sim < 0 or self.w_cls < 0 or (self.w_sim == 0 and self.w_cls == 0):
            raise ConfigError("cost weights must be >= 0 and not both zero")


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 2.0
    w_xytl: float = 0.2
    w_liou: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    liou_radius_e: float = 15.0

    def __post_init__(self):
        if min(self.w_cls, self.w_xytl, self.w_liou) < 0:
            raise ConfigError("loss weights must be >= 0")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ConfigError("focal_alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be >= 0")
        if not self.liou_radius_e > 0:
            raise ConfigError("liou_radius_e must be > 0")

    def scaled(self, s: float) -> "LossWeights":
        return LossWeights(self.w_cls * s, self.w_xytl * s, self.w_liou * s,
                           self.focal_alpha, self.focal_gamma, self.liou_radius_e)


def default_liou_radius(image_width: float) -> float:
    """15 px at an 800 px wide canvas, scaled with the width."""
    return 15.0 * image_width / 800.0


def lane_xs(lane, grid: Grid) -> np.ndarray:
    if isinstance(lane, LanePrior):
        return prior_xs_at(lane, grid.rows, grid.height)
    if isinstance(lane, GtLane):
        return gt_xs_at(lane, grid.rows)
    return np.asarray(lane, dtype=np.float64)


def line_iou_xs(xa, xb, e: float) -> float:
    """Line-IoU of two lanes given as x arrays on the same rows (NaN = invalid).

    Every valid row widens each point into the segment ``[x - e, x + e]``;
    the result is summed overlap over summed union and may be negative.
    """
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    both = ~np.isnan(xa) & ~np.isnan(xb)
    if not both.any():
        raise UndefinedOverlap("lanes share no valid row")
    a, b = xa[both], xb[both]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    inter = (lo + e) - (hi - e)
    union = (hi + e) - (lo - e)
    return float(inter.sum() / union.sum())


def line_iou(a, b, e: float, grid: Grid | None = None) -> float:
    """Line-IoU of two lanes (priors, polylines or raw x arrays)."""
    if grid is None and (isinstance(a, (LanePrior, GtLane)) or isinstance(b, (LanePrior, GtLane))):
        raise ConfigError("a row grid is required to compare lane objects")
    if grid is not None:
        a, b = lane_xs(a, grid), lane_xs(b, grid)
    return line_iou_xs(a, b, e)


def pairwise_line_iou(preds, gts, grid: Grid, e: float) -> np.ndarray:
    """``(n_pred, n_gt)`` Line-IoU; pairs with no common row get -1."""
    pa = [lane_xs(p, grid) for p in preds]
    ga = [lane_xs(g, grid) for g in gts]
    out = np.full((len(pa), len(ga)), -1.0)
    for i, xa in enumerate(pa):
        for j, xb in enumerate(ga):
            try:
                out[i, j] = line_iou_xs(xa, xb, e)
            except UndefinedOverlap:
                pass
    return out


@dataclass(frozen=True)
class SimCost:
    c_sim: float
    c_dis: float
    c_xy: float
    c_theta: float
    overlap: bool = True


def similarity(c_dis: float, c_xy: float, c_theta: float) -> float:
    return (c_dis * c_xy * c_theta) ** 2


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def sim_cost(pred: LanePrior, gt: GtLane, grid: Grid) -> SimCost:
    """Geometric similarity cost and its normalized components.

    ``c_dis`` is the mean x distance over common rows divided by the image
    width, ``c_xy`` the start-point distance over the image diagonal and
    ``c_theta`` the angle difference over pi. Without common rows ``c_dis``
    is 1 and ``overlap`` is False.
    """
    xp, xg = lane_xs(pred, grid), lane_xs(gt, grid)
    both = ~np.isnan(xp) & ~np.isnan(xg)
    if both.any():
        c_dis = _clamp01(float(np.abs(xp[both] - xg[both]).mean()) / grid.width)
    else:
        c_dis = 1.0
    sx, sy, theta, _ = gt_geometry(gt)
    c_xy = _clamp01(math.hypot(pred.start_x - sx, pred.start_y - sy) / grid.diagonal)
    c_theta = _clamp01(abs(pred.theta - theta) / math.pi)
    return SimCost(similarity(c_dis, c_xy, c_theta), c_dis, c_xy, c_theta, bool(both.any()))


def focal_cost(score: float, positive: bool, lw: LossWeights = LossWeights()) -> float:
    p = min(max(float(score), SCORE_EPS), 1.0 - SCORE_EPS)
    a, g = lw.focal_alpha, lw.focal_gamma
    if positive:
        return -a * (1.0 - p) ** g * math.log(p)
    return -(1.0 - a) * p ** g * math.log(1.0 - p)


@dataclass
class CostMatrix:
    """Assignment cost, ``(n_pred, n_gt)``, with its components kept."""

    cost: np.ndarray
    c_sim: np.ndarray
    c_dis: np.ndarray
    c_xy: np.ndarray
    c_theta: np.ndarray
    c_cls: np.ndarray

    @property
    def shape(self):
        return self.cost.shape


def assignment_cost(preds, gts, cw: CostWeights, lw: LossWeights, grid: Grid) -> CostMatrix:
    if not preds or not gts:
        raise ConfigError("assignment needs at least one prediction and one lane")
    shape = (len(preds), len(gts))
    parts = {k: np.zeros(shape) for k in ("c_sim", "c_dis", "c_xy", "c_theta", "c_cls")}
    for i, p in enumerate(preds):
        cls = focal_cost(p.score, True, lw)
        for j, g in enumerate(gts):
            sc = sim_cost(p, g, grid)
            parts["c_sim"][i, j] = sc.c_sim
            parts["c_dis"][i, j] = sc.c_dis
            parts["c_xy"][i, j] = sc.c_xy
            parts["c_theta"][i, j] = sc.c_theta
            parts["c_cls"][i, j] = cls
    cost = cw.w_sim * parts["c_sim"] + cw.w_cls * parts["c_cls"]
    return CostMatrix(cost=cost, **parts)


def dynamic_k(liou_col: np.ndarray, k_cap: int) -> int:
    """``clamp(floor(sum of the top min(k_cap, n) positive IoUs), 1, k_cap)``."""
    top = np.sort(np.clip(liou_col, 0.0, None))[::-1][:k_cap]
    return int(min(max(math.floor(top.sum()), 1), k_cap))


def dynamic_topk_assign(cm, liou, k_cap: int = 4) -> dict[int, list[int]]:
    """Assign predictions to ground-truth lanes.

    ``cm`` is a :class:`CostMatrix` or a plain ``(n_pred, n_gt)`` array and
    ``liou`` the matching Line-IoU matrix. Pairs are visited in ascending
    ``(cost, gt, pred)`` order, first giving every lane one prediction, then
    filling each lane up to ``k_g`` from its ``k_g`` cheapest predictions.
    A prediction is never shared, so the cheaper lane wins a contested one.

    Returns ``{gt_index: sorted pred indices}``.
    """
    cost = np.asarray(getattr(cm, "cost", cm), dtype=np.float64)
    liou = np.asarray(liou, dtype=np.float64)
    if cost.size == 0:
        raise ConfigError("empty cost matrix")
    if cost.shape != liou.shape:
        raise ConfigError(f"cost {cost.shape} and IoU {liou.shape} shapes differ")
    if k_cap < 1:
        raise ConfigError("k_cap must be >= 1")
    n_pred, n_gt = cost.shape
    ks = [dynamic_k(liou[:, g], k_cap) for g in range(n_gt)]
    order = sorted((cost[p, g], g, p) for p in range(n_pred) for g in range(n_gt))
    owner = {}
    result = {g: [] for g in range(n_gt)}
    for _, g, p in order:
        if p not in owner and not result[g]:
            owner[p] = g
            result[g].append(p)
    allowed = []
    for g in range(n_gt):
        ranked = sorted(range(n_pred), key=lambda p: (cost[p, g], p))
        allowed.append(set(ranked[:ks[g]]))
    for _, g, p in order:
        if p not in owner and p in allowed[g] and len(result[g]) < ks[g]:
            owner[p] = g
            result[g].append(p)
    return {g: sorted(ps) for g, ps in result.items()}


def smooth_l1(r, beta: float = 1.0):
    r = np.abs(np.asarray(r, dtype=np.float64))
    return np.where(r < beta, 0.5 * r * r / beta, r - 0.5 * beta)


def xytl_residuals(pred: LanePrior, gt: GtLane, grid: Grid) -> np.ndarray:
    """Normalized residuals of start x, start y, theta and length."""
    sx, sy, theta, length = gt_geometry(gt)
    return np.array([(pred.start_x - sx) / grid.width, (pred.start_y - sy) / grid.height,
                     (pred.theta - theta) / math.pi, (pred.length - length) / grid.height])


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    l_cls: float
    l_xytl: float
    l_liou: float


def total_loss(preds, gts, assignment, lw: LossWeights, grid: Grid) -> LossBreakdown:
    """Weighted focal + smooth-L1 + Line-IoU loss.

    The focal term averages over every prediction; the regression terms
    average over assigned (prediction, lane) pairs only. Pairs without a
    common row contribute the maximal Line-IoU loss of 2.
    """
    positives = {p: g for g, ps in assignment.items() for p in ps}
    if preds:
        l_cls = float(np.mean([focal_cost(p.score, i in positives, lw) for i, p in enumerate(preds)]))
    else:
        l_cls = 0.0
    if positives:
        xytl, liou = [], []
        for i, g in sorted(positives.items()):
            xytl.append(float(smooth_l1(xytl_residuals(preds[i], gts[g], grid)).sum()))
            try:
                liou.append(1.0 - line_iou(preds[i], gts[g], lw.liou_radius_e, grid))
            except UndefinedOverlap:
                liou.append(2.0)
        l_xytl = float(np.mean(xytl))
        l_liou = float(np.mean(liou))
    else:
        l_xytl = l_liou = 0.0
    total = lw.w_cls * l_cls + lw.w_xytl * l_xytl + lw.w_liou * l_liou
    return LossBreakdown(total, l_cls, l_xytl, l_liou)
