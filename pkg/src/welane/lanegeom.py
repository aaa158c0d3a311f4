"""Lane representations and row sampling grids.

Two lane types are used throughout the package:

* :class:`GtLane` -- an annotated polyline of ``(x, y)`` image points.
* :class:`LanePrior` -- a parametric hypothesis (start point, angle, length)
  carrying ``N`` x-coordinates on a fixed row grid.

The native grid of a prior with ``N`` points on an image of height ``H`` is
``y_j = H * j / (N - 1)``, i.e. index 0 is the top row. Missing entries use
the CULane sentinel ``x = -2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._util import round_half_up
from .errors import ConfigError, ValidationError

N_POINTS = 72
N_SAMPLE = 36
INVALID_X = -2.0


@dataclass
class GtLane:
    """Ground-truth polyline; ``points`` is a ``(K, 2)`` array of ``(x, y)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"lane points must have shape (K, 2), got {pts.shape}")
        self.points = pts

    @property
    def valid_points(self) -> np.ndarray:
        return self.points[self.points[:, 0] != INVALID_X]


@dataclass
class LanePrior:
    start_x: float
    start_y: float
    theta: float
    length: float
    xs: np.ndarray = field(default_factory=lambda: np.full(N_POINTS, INVALID_X))
    score: float = 1.0

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64).ravel()
        if self.xs.size < 2:
            raise ValidationError("a lane prior needs at least 2 grid points")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        if self.length < 0:
            raise ValidationError(f"negative lane length {self.length}")

    @property
    def n_points(self) -> int:
        return self.xs.size


class SampleMode(str, Enum):
    UNIFORM = "uniform"
    ATTENTION = "attention"


@dataclass(frozen=True)
class SampleConfig:
    image_height: int
    n_sample: int = N_SAMPLE
    beta: float = 10.0
    mode: SampleMode = SampleMode.ATTENTION

    def __post_init__(self):
        if self.n_sample < 2:
            raise ConfigError("n_sample must be >= 2")
        if not self.beta > 1.0:
            raise ConfigError("beta must be > 1")
        if self.image_height < 1:
            raise ConfigError("image_height must be >= 1")
        object.__setattr__(self, "mode", SampleMode(self.mode))


def arithmetic_sequence(cfg: SampleConfig) -> np.ndarray:
    """``a_i = i / (n_sample - 1)`` for ``i = 0 .. n_sample - 1``."""
    n = cfg.n_sample
    return np.arange(n, dtype=np.float64) / (n - 1)


def log_warp(a, beta):
    """Concave logarithmic warp of ``[0, 1]`` onto itself.

    ``w(a) = ln(1 + (beta - 1) a) / ln(beta)``, with ``w(0) = 0`` and
    ``w(1) = 1`` exactly. As ``beta -> 1`` the warp tends to the identity.
    """
    a = np.asarray(a, dtype=np.float64)
    w = np.log1p((beta - 1.0) * a) / np.log1p(beta - 1.0)
    w = np.where(a == 0.0, 0.0, w)
    return np.where(a == 1.0, 1.0, w)


def attention_rows(cfg: SampleConfig) -> np.ndarray:
    """Log-warped integer sample rows, sorted and deduplicated.

    The warp is concave, so consecutive rows get closer together as the
    offset approaches ``image_height``. Offsets follow the bottom-up row
    indexing of lane priors; use :func:`as_image_rows` for top-down rows.
    """
    w = log_warp(arithmetic_sequence(cfg), cfg.beta)
    rows = round_half_up(cfg.image_height * w).astype(np.int64)
    return np.unique(rows)


def uniform_rows(cfg: SampleConfig) -> np.ndarray:
    rows = round_half_up(cfg.image_height * arithmetic_sequence(cfg)).astype(np.int64)
    return np.unique(rows)


def sample_rows(cfg: SampleConfig) -> np.ndarray:
    if cfg.mode is SampleMode.ATTENTION:
        return attention_rows(cfg)
    return uniform_rows(cfg)


def as_image_rows(offsets, image_height: int) -> np.ndarray:
    """Convert bottom-up row offsets to ascending top-down image rows."""
    return np.sort(image_height - np.asarray(offsets, dtype=np.int64))


def native_rows(n_points: int, image_height: float) -> np.ndarray:
    return np.linspace(0.0, float(image_height), n_points)


def prior_xs_at(p: LanePrior, rows, image_height: float) -> np.ndarray:
    """x-coordinates of ``p`` at ``rows``; NaN where the prior is invalid.

    A row is valid when it lies in ``[start_y - length, start_y]``, inside the
    image, and neither grid neighbour used for interpolation is a sentinel.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = p.n_points
    t = rows * (n - 1) / float(image_height)
    # Snap float noise so rows from native_rows land exactly on grid points.
    nearest = np.round(t)
    t = np.where(np.abs(t - nearest) < 1e-9, nearest, t)
    inside = (t >= 0) & (t <= n - 1)
    tc = np.clip(t, 0, n - 1)
    i0 = np.minimum(np.floor(tc).astype(np.int64), n - 2)
    frac = tc - i0
    x0 = p.xs[i0]
    x1 = p.xs[i0 + 1]
    # On an exact grid row only the left neighbour matters.
    on_left = frac == 0.0
    on_right = frac == 1.0
    x = np.where(on_left, x0, np.where(on_right, x1, x0 + frac * (x1 - x0)))
    bad = np.where(on_left, x0 == INVALID_X,
                   np.where(on_right, x1 == INVALID_X, (x0 == INVALID_X) | (x1 == INVALID_X)))
    eps = 1e-9
    in_span = (rows >= p.start_y - p.length - eps) & (rows <= p.start_y + eps)
    valid = inside & in_span & ~bad
    return np.where(valid, x, np.nan)


def prior_to_points(p: LanePrior, rows, image_height: float) -> list[tuple[float, float]]:
    """Materialize ``p`` as ``(x, y)`` points on the requested rows."""
    rows = np.asarray(rows, dtype=np.float64)
    xs = prior_xs_at(p, rows, image_height)
    return [(float(x), float(y)) for x, y in zip(xs, rows) if not np.isnan(x)]


def gt_xs_at(gt: GtLane, rows) -> np.ndarray:
    """Linear interpolation of a polyline at ``rows``; NaN outside its span."""
    rows = np.asarray(rows, dtype=np.float64)
    pts = gt.valid_points
    if len(pts) == 0:
        return np.full(rows.shape, np.nan)
    order = np.argsort(pts[:, 1], kind="stable")
    ys, xs = pts[order, 1], pts[order, 0]
    x = np.interp(rows, ys, xs)
    return np.where((rows >= ys[0]) & (rows <= ys[-1]), x, np.nan)


def lane_angle(x_bottom, y_bottom, x_top, y_top) -> float:
    """Angle in ``[0, pi]`` from the image x-axis, pointing up the image."""
    return math.atan2(y_bottom - y_top, x_top - x_bottom)


def gt_geometry(gt: GtLane) -> tuple[float, float, float, float]:
    """``(start_x, start_y, theta, length)`` of a polyline.

    The start point is the lowest valid point (largest y); theta is the angle
    of the chord to the highest point; length is the vertical extent.
    """
    pts = gt.valid_points
    if len(pts) < 2:
        raise ValidationError("lane needs at least 2 valid points")
    lo = pts[np.argmax(pts[:, 1])]
    hi = pts[np.argmin(pts[:, 1])]
    return float(lo[0]), float(lo[1]), lane_angle(lo[0], lo[1], hi[0], hi[1]), float(lo[1] - hi[1])


def prior_from_gt(gt: GtLane, image_height: float, n_points: int = N_POINTS,
                  score: float = 1.0) -> LanePrior:
    """Encode a polyline as a prior on the native grid."""
    sx, sy, theta, length = gt_geometry(gt)
    xs = gt_xs_at(gt, native_rows(n_points, image_height))
    xs = np.where(np.isnan(xs), INVALID_X, xs)
    return LanePrior(sx, sy, theta, length, xs, score)


def line_prior(start_x: float, start_y: float, theta: float, length: float,
               image_height: float, n_points: int = N_POINTS, score: float = 1.0) -> LanePrior:
    """Straight prior from its start point, angle and vertical length."""
    if not 0.0 < theta < math.pi:
        raise ConfigError("theta must lie in (0, pi)")
    rows = native_rows(n_points, image_height)
    xs = start_x + (start_y - rows) * math.cos(theta) / math.sin(theta)
    span = (rows >= start_y - length - 1e-9) & (rows <= start_y + 1e-9)
    xs = np.where(span, xs, INVALID_X)
    return LanePrior(start_x, start_y, theta, length, xs, score)
