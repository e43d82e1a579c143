"""Dense H x W x C feature maps with FMAP and 8-bit PGM/PPM I/O.

Node index i = y * width + x, matching the grid graph numbering.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FMAP_MAGIC = b"LTF2"
FMAP_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FmapError(ValueError):
    pass


class FmapHeaderError(FmapError):
    pass


class FmapTruncatedError(FmapError):
    pass


class NonFiniteError(FmapError):
    pass


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray
    groups: int = 1
    height: int = field(init=False)
    width: int = field(init=False)
    channels: int = field(init=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or 0 in data.shape:
            raise ValueError(f"invalid dimensions {data.shape}")
        if self.groups < 1 or data.shape[2] % self.groups:
            raise ValueError(f"channels={data.shape[2]} not divisible by groups={self.groups}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("non-finite value in feature map")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        h, w, c = data.shape
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "channels", c)

    @property
    def n_nodes(self) -> int:
        return self.height * self.width

    @property
    def group_width(self) -> int:
        return self.channels // self.groups

    @property
    def nodes(self) -> np.ndarray:
        """(N, C) read-only view."""
        return self.data.reshape(self.n_nodes, self.channels)

    def with_groups(self, groups: int) -> "FeatureMap":
        return FeatureMap(self.data, groups=groups)

    @classmethod
    def from_nodes(cls, nodes: np.ndarray, height: int, width: int, groups: int = 1) -> "FeatureMap":
        nodes = np.asarray(nodes, dtype=np.float64)
        return cls(nodes.reshape(height, width, -1), groups=groups)

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (
            self.groups == other.groups
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def save_fmap(fmap: FeatureMap, path) -> None:
    if not isinstance(fmap, FeatureMap):
        raise TypeError("expected a FeatureMap")
    data = np.asarray(fmap.data)
    if 0 in data.shape:
        raise ValueError("invalid dimensions")
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value")
    h, w, c = data.shape
    payload = data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, h, w, c))
        fh.write(payload)


def load_fmap(path, groups: int = 1) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FmapHeaderError("file shorter than FMAP header")
    magic, version, h, w, c = _HEADER.unpack_from(raw)
    if magic != FMAP_MAGIC:
        raise FmapHeaderError(f"bad magic {magic!r}")
    if version != FMAP_VERSION:
        raise FmapHeaderError(f"unsupported version {version}")
    if h == 0 or w == 0 or c == 0:
        raise FmapHeaderError("invalid dimensions")
    expected = h * w * c * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise FmapTruncatedError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FmapHeaderError(f"{len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("non-finite value in payload")
    return FeatureMap(values.reshape(h, w, c), groups=groups)


def _read_netpbm_header(raw: bytes):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError("truncated header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(raw[start:pos])
        if tokens[0] not in (b"P5", b"P6"):
            raise ImageFormatError(f"unsupported magic {tokens[0]!r}")
    # exactly one whitespace byte separates maxval from the raster
    pos += 1
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed header") from exc
    return tokens[0], w, h, maxval, pos


def read_image(path) -> np.ndarray:
    """Raw uint8 raster (H, W, C) of a binary P5/P6 file."""
    raw = Path(path).read_bytes()
    magic, w, h, maxval, pos = _read_netpbm_header(raw)
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images are supported (maxval={maxval})")
    if w <= 0 or h <= 0:
        raise ImageFormatError("invalid dimensions")
    c = 1 if magic == b"P5" else 3
    n = w * h * c
    if len(raw) - pos < n:
        raise ImageFormatError("truncated raster")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).reshape(h, w, c)


def from_image(path) -> FeatureMap:
    return FeatureMap(read_image(path).astype(np.float64) / 255.0)


def write_image(pixels: np.ndarray, path) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    h, w, c = pixels.shape
    if c not in (1, 3):
        raise ImageFormatError(f"cannot write {c}-channel image as PGM/PPM")
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def to_image(fmap: FeatureMap, path) -> None:
    """Quantize values in [0, 1] to 8 bits and write PGM (C=1) or PPM (C=3)."""
    q = np.clip(np.rint(fmap.data * 255.0), 0, 255).astype(np.uint8)
    write_image(q, path)
