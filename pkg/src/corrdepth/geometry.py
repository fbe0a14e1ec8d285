"""Core geometric types and primitives: pixels, lifted points, affine cameras, depth grids.

Conventions used throughout the package:

* pixel coordinates are ``(x, y)`` with ``x`` along columns and ``y`` along rows;
* a depth grid stores one scalar per pixel as ``values[y, x]``; grids produced
  by the optimizer and the renderer stay inside ``[-1, 1]`` (larger = nearer);
* a lifted point is the homogeneous 4-vector ``[x, y, d, 1]``;
* an affine camera is a 2x4 matrix mapping lifted points to pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TypeAlias

import numpy as np
import numpy.typing as npt

from .errors import InputError, OutOfBoundsError

FloatArray: TypeAlias = npt.NDArray[np.float64]
BoolArray: TypeAlias = npt.NDArray[np.bool_]


def _readonly(a: npt.ArrayLike, dtype=np.float64) -> FloatArray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pixel2:
    """A 2D image location in pixels."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputError(f"pixel coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class HPoint3:
    """A lifted homogeneous point [x, y, d, 1]; the last component is fixed at 1."""

    x: float
    y: float
    d: float
    w: float = 1.0

    def __post_init__(self):
        if self.w != 1.0:
            raise InputError(f"homogeneous component must be exactly 1, got {self.w}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.d)):
            raise InputError("lifted point components must be finite")

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.d, self.w], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class AffineCamera:
    """A 2x4 projection matrix mapping lifted points to target-view pixels."""

    p: FloatArray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (2, 4):
            raise InputError(f"camera matrix must be 2x4, got {p.shape}")
        if not np.isfinite(p).all():
            raise InputError("camera matrix entries must be finite")
        object.__setattr__(self, "p", _readonly(p))


@dataclass(frozen=True, eq=False)
class DepthField:
    """A per-pixel depth grid, ``values[y, x]`` with shape (height, width).

    The constructor only checks finiteness and positive dimensions; code that
    emits optimizer/renderer output additionally keeps values in [-1, 1]
    (see ``assert_bounded``). Alignment for evaluation can legitimately
    produce out-of-range grids.
    """

    values: FloatArray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError(f"depth grid must be 2D with positive dims, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InputError("depth grid contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "DepthField":
        return cls(np.zeros((height, width), dtype=np.float64))

    def value_at(self, x: int, y: int) -> float:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise OutOfBoundsError(
                f"pixel ({x}, {y}) outside {self.width}x{self.height} depth grid"
            )
        return float(self.values[y, x])

    def assert_bounded(self) -> None:
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < -1.0 or hi > 1.0:
            raise InputError(f"depth values outside [-1, 1]: range [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Paired pixel locations between a source view and a target view.

    ``source`` and ``target`` are (N, 2) arrays of (x, y) pixels, row i of one
    matching row i of the other. Source points are expected to sit on integer
    grid locations when used against a depth grid; ``snapped`` produces that.
    """

    source: FloatArray
    target: FloatArray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.float64)
        if src.ndim != 2 or src.shape[1] != 2 or tgt.shape != src.shape:
            raise InputError(
                f"correspondences must be matching (N, 2) arrays, got {src.shape} and {tgt.shape}"
            )
        if src.shape[0] < 1:
            raise InputError("correspondence set must contain at least one pair")
        if not (np.isfinite(src).all() and np.isfinite(tgt).all()):
            raise InputError("correspondence coordinates must be finite")
        object.__setattr__(self, "source", _readonly(src))
        object.__setattr__(self, "target", _readonly(tgt))

    def __len__(self) -> int:
        return self.source.shape[0]

    def snapped(self) -> tuple["CorrespondenceSet", int]:
        """Round source points to the nearest integer pixel.

        Returns the snapped set and the number of points that moved, so
        ingestion can record that snapping happened.
        """
        rounded = np.rint(self.source)
        moved = int(np.count_nonzero(np.any(rounded != self.source, axis=1)))
        if moved == 0:
            return self, 0
        return CorrespondenceSet(rounded, self.target), moved


def lift(pix: Pixel2, field: DepthField) -> HPoint3:
    """Lift a source pixel to [x, y, d, 1] using the depth stored at that pixel.

    The pixel must sit exactly on an integer grid location inside the field.
    """
    ix, iy = round(pix.x), round(pix.y)
    if ix != pix.x or iy != pix.y:
        raise InputError(
            f"pixel ({pix.x}, {pix.y}) is not an integer grid location; snap sources first"
        )
    return HPoint3(pix.x, pix.y, field.value_at(int(ix), int(iy)))


def lift_many(source: FloatArray, field: DepthField) -> FloatArray:
    """Vectorized lift: (N, 2) integer-located source pixels -> (N, 4) lifted points."""
    src = np.asarray(source, dtype=np.float64)
    ix = np.rint(src[:, 0])
    iy = np.rint(src[:, 1])
    if np.any(ix != src[:, 0]) or np.any(iy != src[:, 1]):
        raise InputError("source pixels must sit on integer grid locations; snap sources first")
    if (
        np.any(ix < 0)
        or np.any(ix >= field.width)
        or np.any(iy < 0)
        or np.any(iy >= field.height)
    ):
        raise OutOfBoundsError(
            f"source pixels outside {field.width}x{field.height} depth grid"
        )
    d = field.values[iy.astype(np.intp), ix.astype(np.intp)]
    return np.column_stack([src[:, 0], src[:, 1], d, np.ones(len(src))])


def project(cam: AffineCamera, pt: HPoint3) -> Pixel2:
    """Project a lifted point into the target view."""
    v = cam.p @ pt.as_array()
    return Pixel2(float(v[0]), float(v[1]))


def project_points(cam: AffineCamera, points: FloatArray) -> FloatArray:
    """Project (N, 4) lifted points to (N, 2) target pixels."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ cam.p.T


def reprojection_residual(
    cam: AffineCamera, src: Pixel2, tgt: Pixel2, field: DepthField
) -> float:
    """Euclidean pixel distance between the projected lifted source and its target."""
    proj = project(cam, lift(src, field))
    return float(math.hypot(proj.x - tgt.x, proj.y - tgt.y))


def as_point_stack(points: Sequence[HPoint3] | npt.ArrayLike) -> FloatArray:
    """Coerce lifted points to an (N, 4) float array, validating the homogeneous 1."""
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
    else:
        seq = list(points)
        if seq and isinstance(seq[0], HPoint3):
            pts = np.array([p.as_array() for p in seq])
        else:
            pts = np.asarray(seq, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise InputError(f"expected (N, 4) lifted points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise InputError("lifted points must be finite")
    if np.any(pts[:, 3] != 1.0):
        raise InputError("lifted points must have homogeneous component exactly 1")
    return pts


def as_pixel_stack(pixels: Sequence[Pixel2] | npt.ArrayLike) -> FloatArray:
    """Coerce pixels to an (N, 2) float array."""
    if isinstance(pixels, np.ndarray):
        px = np.asarray(pixels, dtype=np.float64)
    else:
        seq = list(pixels)
        if seq and isinstance(seq[0], Pixel2):
            px = np.array([p.as_array() for p in seq])
        else:
            px = np.asarray(seq, dtype=np.float64)
    if px.ndim != 2 or px.shape[1] != 2:
        raise InputError(f"expected (N, 2) pixels, got shape {px.shape}")
    if not np.isfinite(px).all():
        raise InputError("pixels must be finite")
    return px


# ---------------------------------------------------------------------------
# Serialization. Scalars are written with %.17g so float64 values round-trip
# exactly and reruns are byte-identical.
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "%.17g" % v


def write_depth_text(field: DepthField, path: str | Path) -> None:
    """Plain-text grid: first line "W H", then H rows of W scalars (top row first)."""
    lines = [f"{field.width} {field.height}"]
    for row in field.values:
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_depth_text(path: str | Path) -> DepthField:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"empty depth grid file: {path}")
    try:
        w, h = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise InputError(f"bad depth grid header {lines[0]!r} in {path}") from exc
    if len(lines) != h + 1:
        raise InputError(f"expected {h} grid rows in {path}, found {len(lines) - 1}")
    try:
        rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1:]]
        values = np.vstack(rows)
    except ValueError as exc:
        raise InputError(f"bad grid row in {path}") from exc
    if values.shape != (h, w):
        raise InputError(f"grid body shape {values.shape} does not match header ({h}, {w})")
    return DepthField(values)


def write_depth_pgm(field: DepthField, path: str | Path) -> None:
    """8-bit binary PGM visualization; [-1, 1] maps linearly to [0, 255]."""
    scaled = np.rint((np.clip(field.values, -1.0, 1.0) + 1.0) * 0.5 * 255.0)
    data = scaled.astype(np.uint8)
    header = f"P5\n{field.width} {field.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def save_correspondences_csv(corr: CorrespondenceSet, path: str | Path) -> None:
    """CSV with header "xs,ys,xt,yt", one pair per row."""
    lines = ["xs,ys,xt,yt"]
    for (xs, ys), (xt, yt) in zip(corr.source, corr.target):
        lines.append(f"{_fmt(xs)},{_fmt(ys)},{_fmt(xt)},{_fmt(yt)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_correspondences_csv(path: str | Path) -> CorrespondenceSet:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "xs,ys,xt,yt":
        raise InputError(f"correspondence CSV {path} must start with header 'xs,ys,xt,yt'")
    if len(lines) < 2:
        raise InputError(f"correspondence CSV {path} contains no pairs")
    try:
        body = np.array([[float(tok) for tok in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise InputError(f"bad row in correspondence CSV {path}") from exc
    if body.shape[1] != 4:
        raise InputError(f"correspondence CSV rows must have 4 columns, got {body.shape[1]}")
    return CorrespondenceSet(body[:, :2], body[:, 2:])
