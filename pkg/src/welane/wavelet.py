"""Wavelet-enhanced feature fusion.

Forward passes only: a one-level orthonormal Haar DWT and its inverse, an
embedded-Gaussian non-local block, the wavelet non-local block that applies
attention to the LL subband, and the weighted two-branch fusion followed by
a 3x3 refinement convolution.

Feature maps are ``float64`` arrays of shape ``(C, H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError
from .tensorio import check_feature_map

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Subbands:
    """One-level Haar decomposition.

    ``shape`` is the ``(H, W)`` of the input before any odd-size padding, so
    :func:`idwt2` can crop the reconstruction back.
    """

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        dims = {b.shape for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(dims) != 1:
            raise ConfigError(f"subband shapes differ: {sorted(dims)}")
        (c, h, w), = dims
        H, W = self.shape
        if (h, w) != ((H + 1) // 2, (W + 1) // 2):
            raise ConfigError(f"subbands {h}x{w} do not match output {H}x{W}")


@dataclass
class BlockWeights:
    theta_w: np.ndarray   # (C', C)
    phi_w: np.ndarray     # (C', C)
    g_w: np.ndarray       # (C', C)
    out_w: np.ndarray     # (C, C')
    refine_w: np.ndarray  # (C, C, 3, 3)
    refine_b: np.ndarray  # (C,)
    seed: int | None = None

    def __post_init__(self):
        ce, c = np.shape(self.theta_w)
        want = {"theta_w": (ce, c), "phi_w": (ce, c), "g_w": (ce, c), "out_w": (c, ce),
                "refine_w": (c, c, 3, 3), "refine_b": (c,)}
        for name, shape in want.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @property
    def channels(self) -> int:
        return self.theta_w.shape[1]

    @property
    def embed(self) -> int:
        return self.theta_w.shape[0]

    def to_records(self) -> list[np.ndarray]:
        """Weights as 3-D tensors for :func:`welane.tensorio.write_tensors`."""
        c = self.channels
        return [self.theta_w[None], self.phi_w[None], self.g_w[None], self.out_w[None],
                self.refine_w.reshape(c * c, 3, 3), self.refine_b.reshape(1, 1, c)]

    @classmethod
    def from_records(cls, records) -> "BlockWeights":
        if len(records) != 6:
            raise ConfigError(f"expected 6 weight records, got {len(records)}")
        th, ph, g, out, rw, rb = records
        c = th.shape[2]
        try:
            return cls(th[0], ph[0], g[0], out[0], rw.reshape(c, c, 3, 3), rb.reshape(c))
        except ValueError as exc:
            raise ConfigError(f"inconsistent weight records: {exc}") from None


class XorShift64:
    """xorshift64* generator seeded through splitmix64 (so seed 0 is usable)."""

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.state = (z ^ (z >> 31)) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, n: int, scale: float) -> np.ndarray:
        """``n`` draws from ``U(-scale, scale)``."""
        u = np.array([(self.next_u64() >> 11) * 2.0 ** -53 for _ in range(n)])
        return scale * (2.0 * u - 1.0)


def make_weights(c: int, c_embed: int, seed: int) -> BlockWeights:
    """Deterministic pseudo-random weights, ``U(-1/sqrt(c), 1/sqrt(c))``.

    Values are rounded to float32 so they survive a tensor-file round trip
    bit-for-bit.
    """
    if c < 1 or c_embed < 1:
        raise ConfigError("channel counts must be >= 1")
    rng = XorShift64(seed)
    s = 1.0 / math.sqrt(c)

    def draw(*shape):
        return rng.uniform(int(np.prod(shape)), s).astype(np.float32).astype(np.float64).reshape(shape)

    return BlockWeights(draw(c_embed, c), draw(c_embed, c), draw(c_embed, c), draw(c, c_embed),
                        draw(c, c, 3, 3), draw(c), seed=seed)


def zero_weights(c: int, c_embed: int) -> BlockWeights:
    return BlockWeights(np.zeros((c_embed, c)), np.zeros((c_embed, c)), np.zeros((c_embed, c)),
                        np.zeros((c, c_embed)), identity_kernel(c), np.zeros(c))


def identity_kernel(c: int) -> np.ndarray:
    k = np.zeros((c, c, 3, 3))
    k[np.arange(c), np.arange(c), 1, 1] = 1.0
    return k


def with_identity_refine(w: BlockWeights) -> BlockWeights:
    c = w.channels
    return BlockWeights(w.theta_w, w.phi_w, w.g_w, w.out_w, identity_kernel(c), np.zeros(c), w.seed)


def dwt2(x) -> Subbands:
    x = check_feature_map(x)
    c, h, w = x.shape
    if x.size == 0:
        raise ConfigError("cannot transform an empty tensor")
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2)), mode="edge")
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    cc = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return Subbands(ll=(a + b + cc + d) / 2, lh=(a - b + cc - d) / 2,
                    hl=(a + b - cc - d) / 2, hh=(a - b - cc + d) / 2, shape=(h, w))


def idwt2(s: Subbands) -> np.ndarray:
    ll, lh, hl, hh = s.ll, s.lh, s.hl, s.hh
    c, h, w = ll.shape
    out = np.empty((c, 2 * h, 2 * w))
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[:, 0::2, 1::2] = (ll - lh + hl - hh) / 2
    out[:, 1::2, 0::2] = (ll + lh - hl - hh) / 2
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2
    H, W = s.shape
    return out[:, :H, :W]


def _check_channels(x: np.ndarray, w: BlockWeights) -> None:
    if x.shape[0] != w.channels:
        raise ConfigError(f"feature map has {x.shape[0]} channels, weights expect {w.channels}")


def attention_map(x, w: BlockWeights) -> np.ndarray:
    """Row-stochastic ``(N, N)`` affinity matrix of the non-local block."""
    x = check_feature_map(x)
    _check_channels(x, w)
    flat = x.reshape(x.shape[0], -1)
    logits = (w.theta_w @ flat).T @ (w.phi_w @ flat) / math.sqrt(w.embed)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def nonlocal_block(x, w: BlockWeights) -> np.ndarray:
    """Embedded-Gaussian non-local block with a residual connection."""
    x = check_feature_map(x)
    _check_channels(x, w)
    c, h, wd = x.shape
    flat = x.reshape(c, -1)
    attn = attention_map(x, w)
    y = w.out_w @ ((w.g_w @ flat) @ attn.T)
    if not np.all(np.isfinite(y)):
        raise NumericsError("non-local block produced non-finite values")
    return x + y.reshape(c, h, wd)


def wavelet_nonlocal(x, w: BlockWeights) -> np.ndarray:
    """Non-local attention on the LL subband; detail subbands pass through."""
    s = dwt2(x)
    ll = nonlocal_block(s.ll, w)
    return idwt2(Subbands(ll, s.lh, s.hl, s.hh, s.shape))


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 3x3 convolution with replicate padding."""
    c, h, w = x.shape
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.broadcast_to(bias[:, None, None], (kernel.shape[0], h, w)).copy()
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("oi,ihw->ohw", kernel[:, :, dy, dx], p[:, dy:dy + h, dx:dx + w])
    return out


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")


def blend(fpn_branch, we_branch, alpha: float) -> np.ndarray:
    return alpha * np.asarray(we_branch) + (1.0 - alpha) * np.asarray(fpn_branch)


def fuse(fpn_branch, we_branch, cfg: FusionConfig, w: BlockWeights) -> np.ndarray:
    """``alpha * we + (1 - alpha) * fpn`` refined by a 3x3 convolution."""
    fpn_branch = check_feature_map(fpn_branch)
    we_branch = check_feature_map(we_branch)
    if fpn_branch.shape != we_branch.shape:
        raise ConfigError(f"branch shapes differ: {fpn_branch.shape} vs {we_branch.shape}")
    _check_channels(fpn_branch, w)
    return conv3x3(blend(fpn_branch, we_branch, cfg.alpha), w.refine_w, w.refine_b)
