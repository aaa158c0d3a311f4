"""Post-processing of predicted lane priors: score filtering and Line-IoU NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UndefinedOverlap
from .lanegeom import LanePrior, native_rows, prior_xs_at
from .assignloss import line_iou_xs


@dataclass(frozen=True)
class InferenceConfig:
    score_threshold: float = 0.4
    nms_iou_threshold: float = 0.5
    max_lanes: int = 4
    nms_free: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("score_threshold must lie in [0, 1]")
        if not 0.0 <= self.nms_iou_threshold <= 1.0:
            raise ConfigError("nms_iou_threshold must lie in [0, 1]")
        if self.max_lanes < 1:
            raise ConfigError("max_lanes must be >= 1")


def filter_by_score(preds, cfg: InferenceConfig) -> list[LanePrior]:
    return [p for p in preds if p.score >= cfg.score_threshold]


def suppression_iou(a: LanePrior, b: LanePrior, e: float, image_height: float) -> float:
    """Line-IoU clamped to ``[0, 1]``; lanes with no common row score 0."""
    n = max(a.n_points, b.n_points)
    rows = native_rows(n, image_height)
    try:
        v = line_iou_xs(prior_xs_at(a, rows, image_height), prior_xs_at(b, rows, image_height), e)
    except UndefinedOverlap:
        return 0.0
    return min(max(v, 0.0), 1.0)


def nms(preds, cfg: InferenceConfig, e: float, image_height: float) -> list[LanePrior]:
    """Greedy Line-IoU non-maximum suppression.

    Candidates are visited by descending score (ties: lower input index
    first). A candidate is kept unless its clamped IoU with an already kept
    lane exceeds ``cfg.nms_iou_threshold``; at most ``cfg.max_lanes`` survive.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    kept: list[LanePrior] = []
    for i in order:
        if len(kept) >= cfg.max_lanes:
            break
        cand = preds[i]
        if all(suppression_iou(cand, k, e, image_height) <= cfg.nms_iou_threshold for k in kept):
            kept.append(cand)
    return kept


def infer(preds, cfg: InferenceConfig, e: float, image_height: float) -> list[LanePrior]:
    """Score threshold, then NMS unless running in one-to-one (NMS-free) mode."""
    kept = filter_by_score(preds, cfg)
    if cfg.nms_free:
        return kept
    return nms(kept, cfg, e, image_height)


def pairwise_suppression_iou(preds, e: float, image_height: float) -> np.ndarray:
    n = len(preds)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = suppression_iou(preds[i], preds[j], e, image_height)
    return out
