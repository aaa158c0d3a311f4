"""CULane-style F1 / mF1 and TuSimple-style accuracy metrics.

CULane scoring rasterizes each lane as a 30 px wide stroke with round caps,
sampled at pixel centres, and matches predictions to annotations greedily by
descending mask IoU (ties: lower prediction index, then lower lane index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .lanegeom import INVALID_X, GtLane, native_rows
from .tensorio import LaneFile, lane_points

MF1_TAUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
TUSIMPLE_PIXEL_THRESH = 20.0
TUSIMPLE_POINT_RATIO = 0.85


def rasterize(points, width_px: float, canvas: tuple[int, int]) -> np.ndarray:
    """Boolean ``(H, W)`` mask of a polyline stroked ``width_px`` wide.

    A pixel is set when its centre lies strictly closer than ``width_px / 2``
    to some segment, which gives round caps and joins.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise MetricError("a lane needs at least 2 points to rasterize")
    h, w = canvas
    r = width_px / 2.0
    mask = np.zeros((h, w), dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        c0 = max(int(np.floor(min(x0, x1) - r)), 0)
        c1 = min(int(np.ceil(max(x0, x1) + r)) + 1, w)
        r0 = max(int(np.floor(min(y0, y1) - r)), 0)
        r1 = min(int(np.ceil(max(y0, y1) + r)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        px = np.arange(c0, c1) + 0.5
        py = np.arange(r0, r1)[:, None] + 0.5
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 > 0:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg2, 0.0, 1.0)
        else:
            t = 0.0
        d2 = (px - (x0 + t * dx)) ** 2 + (py - (y0 + t * dy)) ** 2
        mask[r0:r1, c0:c1] |= d2 < r * r
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def lane_mask_iou(a, b, width_px: float = 30.0, canvas: tuple[int, int] = (590, 1640)) -> float:
    return mask_iou(rasterize(a, width_px, canvas), rasterize(b, width_px, canvas))


@dataclass
class F1Result:
    tau: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __iadd__(self, other: "F1Result"):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


@dataclass
class EvalReport:
    """Per-threshold CULane counts, or TuSimple rates (``mode='tusimple'``)."""

    mode: str = "culane"
    results: list[F1Result] = field(default_factory=list)
    accuracy: float | None = None
    fp_rate: float | None = None
    fn_rate: float | None = None

    def at(self, tau: float) -> F1Result:
        for r in self.results:
            if abs(r.tau - tau) < 1e-9:
                return r
        raise KeyError(tau)

    @property
    def mf1(self) -> float:
        if not self.results:
            return 0.0
        return float(np.mean([r.f1 for r in self.results]))

    def key_values(self) -> list[tuple[str, str]]:
        if self.mode == "tusimple":
            return [("accuracy", f"{self.accuracy:.6f}"), ("fp", f"{self.fp_rate:.6f}"),
                    ("fn", f"{self.fn_rate:.6f}")]
        out = []
        for r in self.results:
            t = f"{round(r.tau * 100):d}"
            out += [(f"tp@{t}", str(r.tp)), (f"fp@{t}", str(r.fp)), (f"fn@{t}", str(r.fn)),
                    (f"precision@{t}", f"{r.precision:.6f}"), (f"recall@{t}", f"{r.recall:.6f}"),
                    (f"f1@{t}", f"{r.f1:.6f}")]
        if len(self.results) > 1:
            out.append(("mf1", f"{self.mf1:.6f}"))
        return out

    def table(self) -> str:
        if self.mode == "tusimple":
            rows = [("Acc", self.accuracy), ("FP", self.fp_rate), ("FN", self.fn_rate)]
            return "\n".join(f"{k:<4}{v * 100:>9.2f}%" for k, v in rows)
        lines = [f"{'tau':>5} {'tp':>6} {'fp':>6} {'fn':>6} {'prec':>8} {'rec':>8} {'f1':>8}"]
        for r in self.results:
            lines.append(f"{r.tau:>5.2f} {r.tp:>6d} {r.fp:>6d} {r.fn:>6d} "
                         f"{r.precision:>8.4f} {r.recall:>8.4f} {r.f1:>8.4f}")
        if len(self.results) > 1:
            lines.append(f"{'mF1':>5} {self.mf1:>44.4f}")
        return "\n".join(lines)


def _canvas(preds: LaneFile, gts: LaneFile) -> tuple[int, int]:
    if gts.image_height is None or gts.image_width is None:
        raise MetricError("ground-truth lane file has no canvas header")
    if preds.image_height is not None and (preds.image_height, preds.image_width) != \
            (gts.image_height, gts.image_width):
        raise MetricError("prediction and ground-truth canvases differ")
    return gts.image_height, gts.image_width


def iou_matrix(preds: LaneFile, gts: LaneFile, width_px: float = 30.0) -> np.ndarray:
    canvas = _canvas(preds, gts)
    pm = [rasterize(lane_points(ln, canvas[0]), width_px, canvas) for ln in preds.lanes]
    gm = [rasterize(lane_points(ln, canvas[0]), width_px, canvas) for ln in gts.lanes]
    out = np.zeros((len(pm), len(gm)))
    for i, a in enumerate(pm):
        for j, b in enumerate(gm):
            out[i, j] = mask_iou(a, b)
    return out


def greedy_matches(iou: np.ndarray, tau: float) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of pairs with IoU strictly above ``tau``."""
    pairs = sorted(((-iou[i, j], i, j) for i in range(iou.shape[0]) for j in range(iou.shape[1])))
    used_p, used_g, out = set(), set(), []
    for neg, i, j in pairs:
        if -neg <= tau:
            break
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            out.append((i, j))
    return out


def counts_from_iou(iou: np.ndarray, tau: float) -> F1Result:
    n_pred, n_gt = iou.shape
    tp = len(greedy_matches(iou, tau))
    return F1Result(tau, tp, n_pred - tp, n_gt - tp)


def culane_f1(preds: LaneFile, gts: LaneFile, tau: float = 0.5, width_px: float = 30.0) -> F1Result:
    return counts_from_iou(iou_matrix(preds, gts, width_px), tau)


def culane_report(pairs, taus=MF1_TAUS, width_px: float = 30.0) -> EvalReport:
    """Aggregate counts over ``(preds, gts)`` lane-file pairs."""
    results = [F1Result(t) for t in taus]
    for preds, gts in pairs:
        iou = iou_matrix(preds, gts, width_px)
        for r in results:
            r += counts_from_iou(iou, r.tau)
    return EvalReport("culane", results)


def mf1(preds: LaneFile, gts: LaneFile, width_px: float = 30.0) -> EvalReport:
    return culane_report([(preds, gts)], MF1_TAUS, width_px)


@dataclass
class TuSimpleCounts:
    correct: int = 0
    gt_points: int = 0
    fp: int = 0
    n_pred: int = 0
    fn: int = 0
    n_gt: int = 0

    def __iadd__(self, o: "TuSimpleCounts"):
        for k in ("correct", "gt_points", "fp", "n_pred", "fn", "n_gt"):
            setattr(self, k, getattr(self, k) + getattr(o, k))
        return self

    def report(self) -> EvalReport:
        return EvalReport("tusimple", [],
                          accuracy=self.correct / self.gt_points if self.gt_points else 0.0,
                          fp_rate=self.fp / self.n_pred if self.n_pred else 0.0,
                          fn_rate=self.fn / self.n_gt if self.n_gt else 0.0)


def _row_map(lane, height) -> dict[float, float]:
    """``{y: x}`` over every point, sentinel points included."""
    if isinstance(lane, GtLane):
        pts = lane.points
    else:
        pts = np.stack([lane.xs, native_rows(lane.n_points, height)], axis=1)
    return {float(y): float(x) for x, y in pts}


def tusimple_counts(preds: LaneFile, gts: LaneFile, pixel_thresh: float = TUSIMPLE_PIXEL_THRESH,
                    point_ratio: float = TUSIMPLE_POINT_RATIO) -> TuSimpleCounts:
    height = gts.image_height or preds.image_height
    gt_maps = [_row_map(ln, height) for ln in gts.lanes]
    pred_maps = [_row_map(ln, height) for ln in preds.lanes]
    anchors = set().union(*gt_maps) if gt_maps else set()
    if gt_maps:
        for i, pm in enumerate(pred_maps):
            extra = set(pm) - anchors
            if extra:
                raise MetricError(f"prediction {i} uses rows outside the anchor set: {sorted(extra)[:3]}")
    c = TuSimpleCounts(n_pred=len(pred_maps), n_gt=len(gt_maps))
    matched = 0
    for gm in gt_maps:
        valid = {y: x for y, x in gm.items() if x != INVALID_X}
        c.gt_points += len(valid)
        best = 0
        for pm in pred_maps:
            hits = sum(1 for y, x in valid.items()
                       if pm.get(y, INVALID_X) != INVALID_X and abs(pm[y] - x) < pixel_thresh)
            best = max(best, hits)
        c.correct += best
        if valid and best / len(valid) >= point_ratio:
            matched += 1
        else:
            c.fn += 1
    c.fp = max(len(pred_maps) - matched, 0)
    return c


def tusimple_metrics(preds: LaneFile, gts: LaneFile) -> EvalReport:
    return tusimple_counts(preds, gts).report()
