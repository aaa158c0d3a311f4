"""Readers and writers for images, feature tensors and lane files.

Formats
-------
* Binary PGM (``P5``, one channel) and PPM (``P6``, three channels) with
  maxval 255. Images are ``uint8`` arrays of shape ``(H, W)`` or ``(H, W, 3)``.
* Tensor files: ``b"WFPN"``, three little-endian ``u32`` dims ``C, H, W``,
  then ``C*H*W`` little-endian ``f32`` values. Feature maps are ``float64``
  arrays of shape ``(C, H, W)``; writing quantizes to ``f32``.
* Lane files: UTF-8 text. An optional first line ``H W`` gives the canvas.
  Each following non-empty line is one lane: either ``x y x y ...`` (a
  ground-truth polyline) or ``P score theta length start_x start_y`` followed
  by the prior's ``x y`` pairs on its native grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, ParseError, TruncationError, ValidationError
from .lanegeom import INVALID_X, GtLane, LanePrior, native_rows

TENSOR_MAGIC = b"WFPN"
_WS = b" \t\r\n\v\f"


# -- images -----------------------------------------------------------------

def check_image(img) -> np.ndarray:
    """Validate an 8-bit image and return it as an ``(H, W[, 3])`` array."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValidationError(f"image must be uint8, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3):
        if img.shape[0] < 1 or img.shape[1] < 1:
            raise ValidationError("image must be at least 1x1")
        return img
    raise ValidationError(f"image must have 1 or 3 channels, got shape {img.shape}")


def _header_tokens(buf: bytes, count: int):
    """Yield ``count`` whitespace-separated header tokens with their offsets.

    Returns the tokens and the offset of the byte following the last token.
    """
    pos = 0
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise ParseError("unexpected end of header", offset=pos)
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        tokens.append((buf[start:pos], start))
    return tokens, pos


def decode_image(buf: bytes) -> np.ndarray:
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise ParseError("expected P5 or P6 magic", offset=0)
    channels = 1 if buf[:2] == b"P5" else 3
    if len(buf) > 2 and buf[2] not in _WS:
        raise ParseError("magic must be followed by whitespace", offset=2)
    tokens, pos = _header_tokens(buf[2:], 3)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise ParseError(f"bad header field {tok[:16]!r}", offset=off + 2)
        values.append(int(tok))
    width, height, maxval = values
    pos += 2
    if width < 1 or height < 1:
        raise ParseError("image dimensions must be positive", offset=tokens[0][1] + 2)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", offset=tokens[2][1] + 2)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise TruncationError(f"payload has {len(payload)} of {need} bytes", offset=pos + len(payload))
    data = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).copy()


def encode_image(img) -> bytes:
    img = check_image(img)
    magic = b"P5" if img.ndim == 2 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0])
    return header + np.ascontiguousarray(img).tobytes()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_image(path) -> np.ndarray:
    return decode_image(_read_bytes(path))


def write_image(img, path) -> None:
    _write_bytes(path, encode_image(img))


# -- feature tensors ----------------------------------------------------------

def check_feature_map(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"feature map must be (C, H, W), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature map contains NaN or Inf")
    return x


def encode_tensor(x) -> bytes:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValidationError(f"tensor must be (C, H, W), got shape {x.shape}")
    header = TENSOR_MAGIC + struct.pack("<3I", *x.shape)
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic, expected b'WFPN'")
    if len(buf) < 16:
        raise TruncationError("tensor header shorter than 16 bytes", offset=len(buf))
    c, h, w = struct.unpack_from("<3I", buf, 4)
    need = 4 * c * h * w
    payload = buf[16:16 + need]
    if len(payload) < need:
        raise TruncationError(f"payload has {len(payload)} of {need} bytes", offset=16 + len(payload))
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if np.isnan(data).any():
        raise ValidationError("tensor payload contains NaN")
    if np.isinf(data).any():
        raise ValidationError("tensor payload contains Inf")
    return data


def decode_tensors(buf: bytes) -> list[np.ndarray]:
    """Split a concatenation of tensor records."""
    out = []
    pos = 0
    while pos < len(buf):
        chunk = buf[pos:]
        if len(chunk) < 16:
            raise TruncationError("trailing bytes shorter than a tensor header", offset=pos)
        c, h, w = struct.unpack_from("<3I", chunk, 4)
        size = 16 + 4 * c * h * w
        try:
            out.append(decode_tensor(chunk[:size]))
        except ParseError as exc:
            raise TruncationError(str(exc), offset=pos + (exc.offset or 0)) from exc
        pos += size
    return out


def read_tensor(path) -> np.ndarray:
    return decode_tensor(_read_bytes(path))


def write_tensor(x, path) -> None:
    _write_bytes(path, encode_tensor(x))


def read_tensors(path) -> list[np.ndarray]:
    return decode_tensors(_read_bytes(path))


def write_tensors(xs, path) -> None:
    _write_bytes(path, b"".join(encode_tensor(x) for x in xs))


# -- lane files -------------------------------------------------------------

@dataclass
class LaneFile:
    image_height: int | None = None
    image_width: int | None = None
    lanes: list = field(default_factory=list)

    @property
    def gt_lanes(self) -> list[GtLane]:
        return [ln for ln in self.lanes if isinstance(ln, GtLane)]

    @property
    def priors(self) -> list[LanePrior]:
        return [ln for ln in self.lanes if isinstance(ln, LanePrior)]

    def check_bounds(self) -> None:
        """Raise ValidationError if a valid point falls outside the canvas."""
        if self.image_height is None or self.image_width is None:
            raise ValidationError("lane file has no canvas header")
        for i, lane in enumerate(self.lanes):
            pts = lane_points(lane, self.image_height)
            ok = (pts[:, 0] >= 0) & (pts[:, 0] < self.image_width) & \
                 (pts[:, 1] >= 0) & (pts[:, 1] < self.image_height)
            if not ok.all():
                raise ValidationError(f"lane {i} has points outside the canvas")


def lane_points(lane, image_height=None) -> np.ndarray:
    """Valid ``(x, y)`` points of a lane of either kind."""
    if isinstance(lane, GtLane):
        return lane.valid_points
    rows = native_rows(lane.n_points, image_height)
    keep = lane.xs != INVALID_X
    return np.stack([lane.xs[keep], rows[keep]], axis=1)


def _floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"non-numeric token: {exc}", line=lineno) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite coordinate", line=lineno)
    return vals


def parse_lanes(text: str) -> LaneFile:
    lf = LaneFile()
    lines = text.splitlines()
    first = True
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if first and len(tokens) == 2 and tokens[0] != "P":
            first = False
            try:
                h, w = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError("header must be two integers 'H W'", line=lineno) from None
            if h < 1 or w < 1:
                raise ParseError("canvas dims must be positive", line=lineno)
            lf.image_height, lf.image_width = h, w
            continue
        first = False
        if tokens[0] == "P":
            if len(tokens) < 6:
                raise ParseError("prior record needs 5 prefix fields", line=lineno)
            score, theta, length, sx, sy = _floats(tokens[1:6], lineno)
            coords = tokens[6:]
            if len(coords) % 2:
                raise ParseError("odd coordinate count", line=lineno)
            vals = _floats(coords, lineno)
            xs = vals[0::2]
            try:
                lf.lanes.append(LanePrior(sx, sy, theta, length, np.array(xs), score))
            except ValidationError as exc:
                raise ParseError(str(exc), line=lineno) from None
        else:
            if len(tokens) % 2:
                raise ParseError("odd coordinate count", line=lineno)
            vals = _floats(tokens, lineno)
            lf.lanes.append(GtLane(np.array(vals).reshape(-1, 2)))
    return lf


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def format_lanes(lf: LaneFile) -> str:
    out = []
    if lf.image_height is not None and lf.image_width is not None:
        out.append(f"{lf.image_height} {lf.image_width}")
    for lane in lf.lanes:
        if isinstance(lane, LanePrior):
            if lf.image_height is None:
                raise ValidationError("writing priors requires a canvas header")
            rows = native_rows(lane.n_points, lf.image_height)
            head = ["P", _fmt(lane.score), f"{lane.theta:.6f}", _fmt(lane.length),
                    _fmt(lane.start_x), _fmt(lane.start_y)]
            pairs = [f"{_fmt(x)} {_fmt(y)}" for x, y in zip(lane.xs, rows)]
            out.append(" ".join(head + pairs))
        else:
            out.append(" ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in lane.points))
    return "\n".join(out) + ("\n" if out else "")


def read_lanes(path) -> LaneFile:
    buf = _read_bytes(path)
    try:
        text = buf.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("lane file is not valid UTF-8", offset=exc.start) from None
    return parse_lanes(text)


def write_lanes(lf: LaneFile, path) -> None:
    _write_bytes(path, format_lanes(lf).encode("utf-8"))
