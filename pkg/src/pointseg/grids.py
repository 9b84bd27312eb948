"""Raster types, connected-component labeling, and bit-exact codecs.

Conventions shared by the whole package:
  * coordinates are (y, x) with the origin at the top-left pixel
  * offset vectors are stored as (dy, dx) in pixel units
  * label id 0 always means background
"""
from __future__ import annotations

import io
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import GridError

__all__ = [
    "LabelGrid",
    "ClassScoreMap",
    "OffsetField",
    "Point",
    "PointAnnotationSet",
    "connected_components",
    "encode_label_pgm",
    "decode_label_pgm",
    "encode_tensor",
    "decode_tensor",
    "encode_label_ppm",
    "encode_points_csv",
    "decode_points_csv",
]

PGM_MAX_ID = 65535
TENSOR_MAGIC = b"MDMT"

# Fixed render palette; instance id i > 0 maps to PALETTE[i % 16], background is black.
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """H x W raster of non-negative integer ids, 0 = background."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise GridError("empty raster")
        if not np.issubdtype(arr.dtype, np.integer):
            raise GridError(f"label data must be integers, got {arr.dtype}")
        if int(arr.min()) < 0:
            raise GridError("negative label id")
        object.__setattr__(self, "data", _freeze(arr.astype(np.int32)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def ids(self) -> list[int]:
        """Sorted foreground ids present in the grid."""
        u = np.unique(self.data)
        return [int(i) for i in u if i > 0]

    def mask_of(self, label_id: int) -> np.ndarray:
        return self.data == label_id


@dataclass(frozen=True, eq=False)
class ClassScoreMap:
    """H x W x (C+1) real-valued scores; channel 0 is the background class."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.size == 0:
            raise GridError("class score map must be H x W x channels")
        if not np.all(np.isfinite(arr)):
            raise GridError("non-finite class scores")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def argmax_grid(self) -> LabelGrid:
        """Per-pixel winning channel as a class-index grid."""
        return LabelGrid(np.argmax(self.data, axis=2).astype(np.int32))


@dataclass(frozen=True, eq=False)
class OffsetField:
    """H x W field of (dy, dx) pixel vectors with a per-pixel validity mask.

    Invalid pixels are forced to (0, 0) at construction.
    """

    vectors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if vec.ndim != 3 or vec.shape[2] != 2 or vec.size == 0:
            raise GridError("offset field must be H x W x 2")
        if val.shape != vec.shape[:2]:
            raise GridError("validity mask shape mismatch")
        if not np.all(np.isfinite(vec[val])):
            raise GridError("non-finite offsets at valid pixels")
        vec = vec.copy()
        vec[~val] = 0.0
        object.__setattr__(self, "vectors", _freeze(vec))
        object.__setattr__(self, "valid", _freeze(val))

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    def to_tensor(self) -> np.ndarray:
        """Pack as H x W x 3 (dy, dx, valid-flag) for the tensor codec."""
        return np.concatenate(
            [self.vectors, self.valid[:, :, None].astype(np.float64)], axis=2
        )

    @classmethod
    def from_tensor(cls, arr: np.ndarray) -> "OffsetField":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise GridError("packed offset tensor must be H x W x 3")
        return cls(arr[:, :, :2], arr[:, :, 2] > 0.5)


class Point(NamedTuple):
    y: int
    x: int
    class_id: int
    instance_id: int


@dataclass(frozen=True)
class PointAnnotationSet:
    """One annotated interior point per instance, ids exactly 1..K."""

    points: tuple[Point, ...]

    def __post_init__(self):
        pts = tuple(Point(*p) for p in self.points)
        ids = sorted(p.instance_id for p in pts)
        if ids != list(range(1, len(pts) + 1)):
            raise GridError(f"instance ids must be exactly 1..K, got {ids}")
        for p in pts:
            if p.class_id < 1:
                raise GridError(f"class id must be >= 1, got {p.class_id}")
            if p.y < 0 or p.x < 0:
                raise GridError("negative point coordinate")
        object.__setattr__(self, "points", tuple(sorted(pts, key=lambda p: p.instance_id)))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def by_instance(self) -> dict[int, Point]:
        return {p.instance_id: p for p in self.points}

    def positions(self) -> np.ndarray:
        """K x 2 float array of (y, x), ordered by instance id."""
        return np.array([[p.y, p.x] for p in self.points], dtype=np.float64).reshape(-1, 2)

    def class_of(self) -> dict[int, int]:
        return {p.instance_id: p.class_id for p in self.points}

    def validate_on(self, height: int, width: int) -> None:
        for p in self.points:
            if not (0 <= p.y < height and 0 <= p.x < width):
                raise GridError(f"point {p} outside {height}x{width} grid")


_NEIGHBORS = {
    4: ((-1, 0), (0, -1), (0, 1), (1, 0)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


def connected_components(mask: np.ndarray, connectivity: int = 8) -> LabelGrid:
    """Label connected true-regions of a boolean mask.

    Component ids are assigned in raster-scan order of each component's first
    pixel, so the labeling is a pure function of the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise GridError("empty raster")
    if connectivity not in _NEIGHBORS:
        raise GridError(f"connectivity must be 4 or 8, got {connectivity}")
    nbrs = _NEIGHBORS[connectivity]
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    next_id = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx]:
                continue
            next_id += 1
            labels[sy, sx] = next_id
            queue = deque([(sy, sx)])
            while queue:
                y, x = queue.popleft()
                for dy, dx in nbrs:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = next_id
                        queue.append((ny, nx))
    return LabelGrid(labels)


def encode_label_pgm(grid: LabelGrid) -> bytes:
    """Binary PGM (P5). Maxval is 255, or 65535 (big-endian samples) when needed."""
    max_id = int(grid.data.max())
    if max_id > PGM_MAX_ID:
        raise GridError(f"id overflow: {max_id} exceeds {PGM_MAX_ID}")
    maxval = 65535 if max_id > 255 else 255
    header = f"P5\n{grid.width} {grid.height}\n{maxval}\n".encode("ascii")
    if maxval == 255:
        payload = grid.data.astype(np.uint8).tobytes()
    else:
        payload = grid.data.astype(">u2").tobytes()
    return header + payload


class _ByteScanner:
    """Whitespace/comment-aware header tokenizer that tracks byte offsets."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def _skip_separators(self) -> None:
        while self.pos < len(self.blob):
            c = self.blob[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = self.blob.find(b"\n", self.pos)
                self.pos = len(self.blob) if nl < 0 else nl + 1
            else:
                return

    def token(self) -> bytes:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.blob) and not self.blob[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            raise GridError(f"malformed header at byte {start}: unexpected end of header")
        return self.blob[start : self.pos]

    def integer(self) -> int:
        start_after_sep = self.pos
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            raise GridError(
                f"malformed header at byte {start_after_sep}: expected integer, got {tok!r}"
            ) from None


def decode_label_pgm(blob: bytes) -> LabelGrid:
    """Inverse of :func:`encode_label_pgm`; strict about payload length."""
    scanner = _ByteScanner(blob)
    magic = scanner.token()
    if magic != b"P5":
        raise GridError(f"malformed header at byte 0: expected P5, got {magic!r}")
    width = scanner.integer()
    height = scanner.integer()
    maxval = scanner.integer()
    if width < 1 or height < 1:
        raise GridError(f"malformed header at byte {scanner.pos}: bad dimensions {width}x{height}")
    if not (0 < maxval <= PGM_MAX_ID):
        raise GridError(f"malformed header at byte {scanner.pos}: bad maxval {maxval}")
    if scanner.pos >= len(blob) or not blob[scanner.pos : scanner.pos + 1].isspace():
        raise GridError(f"malformed header at byte {scanner.pos}: missing separator")
    start = scanner.pos + 1
    bytes_per = 1 if maxval < 256 else 2
    expected = width * height * bytes_per
    payload = blob[start : start + expected]
    if len(payload) < expected:
        raise GridError("unexpected end of data")
    if len(blob) > start + expected:
        raise GridError("trailing data after payload")
    dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return LabelGrid(data.astype(np.int32))


def encode_tensor(values: np.ndarray) -> bytes:
    """Binary tensor codec: magic MDMT, u32 rank, u32 dims, float32-LE payload.

    Values are stored as 32-bit floats, so the round-trip is bit-exact for
    float32-representable data (everything this package writes).
    """
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GridError("non-finite tensor data")
    dims = np.array(arr.shape, dtype="<u4")
    header = TENSOR_MAGIC + np.array([arr.ndim], dtype="<u4").tobytes() + dims.tobytes()
    return header + arr.astype("<f4").tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    """Inverse of :func:`encode_tensor`; returns a float64 array."""
    if blob[:4] != TENSOR_MAGIC:
        raise GridError(f"bad magic: {blob[:4]!r}")
    if len(blob) < 8:
        raise GridError("unexpected end of data")
    rank = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if rank > 8:
        raise GridError(f"implausible tensor rank {rank}")
    dim_end = 8 + 4 * rank
    if len(blob) < dim_end:
        raise GridError("unexpected end of data")
    dims = tuple(int(d) for d in np.frombuffer(blob[8:dim_end], dtype="<u4"))
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    expected = count * 4
    if len(blob) != dim_end + expected:
        raise GridError(
            f"dim/payload mismatch: dims {dims} need {expected} bytes, got {len(blob) - dim_end}"
        )
    values = np.frombuffer(blob[dim_end:], dtype="<f4").astype(np.float64)
    return values.reshape(dims)


def encode_label_ppm(grid: LabelGrid) -> bytes:
    """Binary PPM (P6) colorization: palette color id % 16, black background."""
    h, w = grid.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    palette = np.array(PALETTE, dtype=np.uint8)
    fg = grid.data > 0
    rgb[fg] = palette[grid.data[fg] % 16]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def encode_points_csv(points: PointAnnotationSet) -> str:
    lines = ["y,x,class_id,instance_id"]
    for p in points:
        lines.append(f"{p.y},{p.x},{p.class_id},{p.instance_id}")
    return "\n".join(lines) + "\n"


def decode_points_csv(text: str) -> PointAnnotationSet:
    rows = [line.strip() for line in io.StringIO(text) if line.strip()]
    if not rows or rows[0].replace(" ", "") != "y,x,class_id,instance_id":
        raise GridError("points csv must start with header y,x,class_id,instance_id")
    pts = []
    for i, row in enumerate(rows[1:], start=2):
        fields = row.split(",")
        if len(fields) != 4:
            raise GridError(f"points csv line {i}: expected 4 fields, got {len(fields)}")
        try:
            pts.append(Point(*(int(f) for f in fields)))
        except ValueError:
            raise GridError(f"points csv line {i}: non-integer field") from None
    return PointAnnotationSet(tuple(pts))
