"""Two-stage adaptive image enhancement.

Stage one diagnoses exposure from the luminance histogram and applies an
adaptive gamma curve; stage two runs CLAHE and smooths the result with a
guided filter whose guide is the gamma-corrected image.

All stages work on ``uint8`` images of shape ``(H, W)`` or ``(H, W, 3)`` and
quantize with round-half-up so results are identical on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._util import round_half_up
from .errors import ConfigError
from .tensorio import check_image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# Histogram bins counted as under/over exposed: lowest and highest 5% of 256.
_BAND = 13


class Exposure(str, Enum):
    UNDER = "under"
    OVER = "over"
    NORMAL = "normal"


@dataclass(frozen=True)
class ExposureReport:
    mean_luminance: float
    underexposed_fraction: float
    overexposed_fraction: float
    flag: Exposure


@dataclass(frozen=True)
class EnhanceConfig:
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    guided_radius: int = 8
    guided_epsilon: float = 1e-3
    gamma_target: float = 0.5
    under_thresh: float = 0.35
    over_thresh: float = 0.65

    def __post_init__(self):
        if self.clahe_tiles < 1:
            raise ConfigError("clahe_tiles must be >= 1")
        if not self.clahe_clip >= 1.0:
            raise ConfigError("clahe_clip must be >= 1")
        if self.guided_radius < 1:
            raise ConfigError("guided_radius must be >= 1")
        if not self.guided_epsilon > 0:
            raise ConfigError("guided_epsilon must be > 0")
        if not 0.0 < self.gamma_target < 1.0:
            raise ConfigError("gamma_target must lie in (0, 1)")
        if not 0.0 < self.under_thresh < self.over_thresh < 1.0:
            raise ConfigError("need 0 < under_thresh < over_thresh < 1")


def luminance(img) -> np.ndarray:
    """Float luminance on the 0..255 scale."""
    img = check_image(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    return img.astype(np.float64) @ LUMA_WEIGHTS


def luminance_u8(img) -> np.ndarray:
    return np.clip(round_half_up(luminance(img)), 0, 255).astype(np.uint8)


def analyze_histogram(img, cfg: EnhanceConfig = EnhanceConfig()) -> ExposureReport:
    hist = np.bincount(luminance_u8(img).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    mean = float(hist @ np.arange(256)) / (255.0 * total)
    under = float(hist[:_BAND].sum() / total)
    over = float(hist[256 - _BAND:].sum() / total)
    if mean < cfg.under_thresh:
        flag = Exposure.UNDER
    elif mean > cfg.over_thresh:
        flag = Exposure.OVER
    else:
        flag = Exposure.NORMAL
    return ExposureReport(mean, under, over, flag)


def gamma_for(report: ExposureReport, cfg: EnhanceConfig) -> float:
    # Clamp both ends: ln(1) = 0 would make a fully white image divide by zero.
    mean = min(max(report.mean_luminance, 1.0 / 255.0), 254.0 / 255.0)
    return math.log(cfg.gamma_target) / math.log(mean)


def gamma_lut(gamma: float) -> np.ndarray:
    v = np.arange(256) / 255.0
    return np.clip(round_half_up(255.0 * v ** gamma), 0, 255).astype(np.uint8)


def adaptive_gamma(img, report: ExposureReport, cfg: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    img = check_image(img)
    if report.flag is Exposure.NORMAL:
        return img.copy()
    return gamma_lut(gamma_for(report, cfg))[img]


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return (np.arange(tiles + 1) * n) // tiles


def clahe_lut(tile: np.ndarray, clip: float) -> np.ndarray:
    """Float transfer function (0..255) for one tile.

    ``clip`` is in multiples of the uniform bin height ``pixels / 256``; the
    clipped excess is spread evenly over all 256 bins in one pass.
    """
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    limit = clip * total / 256.0
    excess = np.maximum(hist - limit, 0.0).sum()
    if excess > 0:
        hist = np.minimum(hist, limit) + excess / 256.0
    return 255.0 * np.cumsum(hist) / total


def _interp_weights(n: int, edges: np.ndarray):
    """Per-coordinate lower tile index and blend weight between tile centres."""
    centres = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    tiles = len(centres)
    if tiles == 1:
        return np.zeros(n, dtype=np.int64), np.zeros(n)
    lo = np.clip(np.searchsorted(centres, pos, side="right") - 1, 0, tiles - 2)
    w = (pos - centres[lo]) / (centres[lo + 1] - centres[lo])
    return lo, np.clip(w, 0.0, 1.0)


def clahe_gray(gray: np.ndarray, tiles: int, clip: float) -> np.ndarray:
    h, w = gray.shape
    if h < tiles or w < tiles:
        raise ConfigError(f"image {h}x{w} is smaller than the {tiles}x{tiles} tile grid")
    ye, xe = _tile_edges(h, tiles), _tile_edges(w, tiles)
    luts = np.empty((tiles, tiles, 256))
    for i in range(tiles):
        for j in range(tiles):
            luts[i, j] = clahe_lut(gray[ye[i]:ye[i + 1], xe[j]:xe[j + 1]], clip)
    ty, wy = _interp_weights(h, ye)
    tx, wx = _interp_weights(w, xe)
    ty1 = np.minimum(ty + 1, tiles - 1)
    tx1 = np.minimum(tx + 1, tiles - 1)
    g = gray.astype(np.int64)
    wy_, wx_ = wy[:, None], wx[None, :]
    top = (1 - wx_) * luts[ty[:, None], tx[None, :], g] + wx_ * luts[ty[:, None], tx1[None, :], g]
    bot = (1 - wx_) * luts[ty1[:, None], tx[None, :], g] + wx_ * luts[ty1[:, None], tx1[None, :], g]
    out = (1 - wy_) * top + wy_ * bot
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def scale_chroma(img: np.ndarray, new_luma: np.ndarray) -> np.ndarray:
    """Rescale RGB so its luminance becomes ``new_luma``, clamped to 0..255."""
    old = luminance(img)
    new = new_luma.astype(np.float64)
    ratio = np.divide(new, old, out=np.zeros_like(new), where=old > 0)
    out = img.astype(np.float64) * ratio[..., None]
    out = np.where((old > 0)[..., None], out, new[..., None])
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def clahe(img, cfg: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Colour images are equalized on luminance and their channels rescaled by
    the per-pixel luminance ratio.
    """
    img = check_image(img)
    if img.ndim == 2:
        return clahe_gray(img, cfg.clahe_tiles, cfg.clahe_clip)
    return scale_chroma(img, clahe_gray(luminance_u8(img), cfg.clahe_tiles, cfg.clahe_clip))


def box_mean(x: np.ndarray, r: int) -> np.ndarray:
    """Mean over ``(2r+1)^2`` windows with edge-replicated borders."""
    h, w = x.shape
    p = np.pad(x, r, mode="edge")
    s = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    s[1:, 1:] = p.cumsum(0).cumsum(1)
    k = 2 * r + 1
    tot = s[k:k + h, k:k + w] - s[0:h, k:k + w] - s[k:k + h, 0:w] + s[0:h, 0:w]
    return tot / (k * k)


def guided_filter_float(p: np.ndarray, guide: np.ndarray, r: int, eps: float) -> np.ndarray:
    mean_g = box_mean(guide, r)
    mean_p = box_mean(p, r)
    cov = box_mean(guide * p, r) - mean_g * mean_p
    var = np.maximum(box_mean(guide * guide, r) - mean_g * mean_g, 0.0)
    a = cov / (var + eps)
    b = mean_p - a * mean_g
    return box_mean(a, r) * guide + box_mean(b, r)


def guided_filter(img, guide, cfg: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    """Edge-preserving smoothing of ``img`` steered by ``guide``.

    A colour guide is reduced to its luminance; each channel of ``img`` is
    filtered independently.
    """
    img = check_image(img)
    guide = check_image(guide)
    if img.shape[:2] != guide.shape[:2]:
        raise ConfigError(f"input {img.shape[:2]} and guide {guide.shape[:2]} differ in size")
    g = luminance(guide) / 255.0
    src = img.astype(np.float64) / 255.0
    if img.ndim == 2:
        out = guided_filter_float(src, g, cfg.guided_radius, cfg.guided_epsilon)
    else:
        out = np.stack([guided_filter_float(src[..., c], g, cfg.guided_radius, cfg.guided_epsilon)
                        for c in range(3)], axis=-1)
    return np.clip(round_half_up(out * 255.0), 0, 255).astype(np.uint8)


def enhance(img, cfg: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    """analyze_histogram -> adaptive_gamma -> clahe -> guided_filter."""
    report = analyze_histogram(img, cfg)
    corrected = adaptive_gamma(img, report, cfg)
    contrasted = clahe(corrected, cfg)
    return guided_filter(contrasted, corrected, cfg)
