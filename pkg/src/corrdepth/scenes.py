"""Procedural multi-view depth scenes with exactly affine inter-view geometry.

A scene is a smooth parametric height field z = h(q, r) over the world plane,
observed orthographically from several views. Each view rotates the world
about the vertical axis (azimuth) and the horizontal axis (elevation), then
maps the view plane window [-1, 1]^2 onto the pixel grid and the view-frame
z coordinate onto a normalized depth in [-1, 1] (larger = nearer, one shared
scale for the whole scene).

Because every view's (x_pix, y_pix, depth) triple is an affine image of the
world point, any two views are related by an exact 3D affine transform whose
first two rows form the ground-truth camera between them. Correspondences are
generated by lifting integer source pixels with the rendered source depth and
pushing them through that transform, so they reproject with zero residual by
construction.

Surfaces extend smoothly over the whole plane (no background), and rendering
a rotated view inverts the orthographic projection per pixel with a
fixed-point iteration; views oblique enough to fold the height field onto
itself are rejected instead of rendered incorrectly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import InputError, InsufficientSupportError, RenderNotConvergedError
from .geometry import AffineCamera, CorrespondenceSet, DepthField, FloatArray

SURFACE_KINDS = ("gaussian-bumps", "saddle", "hemisphere", "ridge-mix")

# World region sampled when bounding the depth normalization scale.
_SCALE_DOMAIN = 3.0
_SCALE_SAMPLES = 181
_SCALE_MARGIN = 1.1

_FIXED_POINT_TOL = 1e-14
_FIXED_POINT_MAX_ITERS = 400


@dataclass(frozen=True)
class ViewSpec:
    """One orthographic view: azimuth and elevation in degrees."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth < 360.0:
            raise InputError(f"azimuth must lie in [0, 360), got {self.azimuth}")
        if not -45.0 <= self.elevation <= 45.0:
            raise InputError(f"elevation must lie in [-45, 45], got {self.elevation}")


@dataclass(frozen=True)
class SceneSpec:
    """A surface family with parameters, a pixel resolution, and >= 2 views."""

    surface_kind: str
    surface_params: tuple[float, ...]
    resolution: tuple[int, int]
    views: tuple[ViewSpec, ...]
    seed: int

    def __post_init__(self):
        if self.surface_kind not in SURFACE_KINDS:
            raise InputError(
                f"unknown surface kind {self.surface_kind!r}; expected one of {SURFACE_KINDS}"
            )
        object.__setattr__(self, "surface_params", tuple(float(p) for p in self.surface_params))
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 2 or res[0] < 16 or res[1] < 16:
            raise InputError(f"resolution must be at least 16x16, got {self.resolution}")
        object.__setattr__(self, "resolution", res)
        views = tuple(self.views)
        if len(views) < 2:
            raise InputError(f"a scene needs at least 2 views, got {len(views)}")
        object.__setattr__(self, "views", views)
        if self.seed < 0:
            raise InputError("seed must be nonnegative")
        _surface_params_or_default(self.surface_kind, self.surface_params)  # validate early


@dataclass(frozen=True)
class CorruptionSpec:
    """Target-point corruption: isotropic Gaussian noise plus gross outliers."""

    gaussian_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.outlier_magnitude < 0:
            raise InputError("corruption magnitudes must be nonnegative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise InputError("outlier_fraction must lie in [0, 1]")
        if self.seed < 0:
            raise InputError("seed must be nonnegative")


# ---------------------------------------------------------------------------
# Surface families. Slopes are kept moderate so rotated views remain
# single-valued height fields.
# ---------------------------------------------------------------------------

# Default parameter sets are point-symmetric about the window center, so the
# surfaces carry no planar (tilt) trend. Reprojection supervision determines
# depth only up to an added plane; trend-free references keep that unresolved
# direction out of the evaluation.
_DEFAULT_PARAMS = {
    # (amplitude, center_q, center_r, width) per bump
    "gaussian-bumps": (
        0.45, -0.40, -0.25, 0.45,
        0.45, 0.40, 0.25, 0.45,
        -0.30, 0.0, 0.0, 0.35,
    ),
    # (amplitude,)
    "saddle": (0.35,),
    # (amplitude, radius); smooth dome profile with bounded rim slope
    "hemisphere": (0.55, 0.80),
    # (amplitude, angle_deg, offset, width) per ridge
    "ridge-mix": (
        0.35, 25.0, -0.30, 0.40,
        0.35, 25.0, 0.30, 0.40,
        -0.25, 115.0, 0.0, 0.45,
    ),
}


def _surface_params_or_default(kind: str, params: tuple[float, ...]) -> tuple[float, ...]:
    if not params:
        return _DEFAULT_PARAMS[kind]
    if kind in ("gaussian-bumps", "ridge-mix"):
        if len(params) % 4 != 0:
            raise InputError(f"{kind} takes parameter quadruples, got {len(params)} values")
        widths = params[3::4]
        if any(w <= 0 for w in widths):
            raise InputError(f"{kind} widths must be positive")
    elif kind == "saddle":
        if len(params) != 1:
            raise InputError(f"saddle takes a single amplitude, got {len(params)} values")
    elif kind == "hemisphere":
        if len(params) != 2:
            raise InputError(f"hemisphere takes (amplitude, radius), got {len(params)} values")
        if params[1] <= 0:
            raise InputError("hemisphere radius must be positive")
    return params


def surface_height(kind: str, params: tuple[float, ...], q, r):
    """Evaluate the height function of a surface family on world coordinates."""
    p = _surface_params_or_default(kind, tuple(params))
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if kind == "gaussian-bumps":
        h = np.zeros(np.broadcast(q, r).shape)
        for amp, cq, cr, w in zip(p[0::4], p[1::4], p[2::4], p[3::4]):
            h = h + amp * np.exp(-((q - cq) ** 2 + (r - cr) ** 2) / (2.0 * w * w))
        return h
    if kind == "saddle":
        return p[0] * (q * q - r * r)
    if kind == "hemisphere":
        amp, rad = p
        cap = np.maximum(rad * rad - q * q - r * r, 0.0)
        return amp * cap**1.5 / (rad * rad)
    if kind == "ridge-mix":
        h = np.zeros(np.broadcast(q, r).shape)
        for amp, ang, off, w in zip(p[0::4], p[1::4], p[2::4], p[3::4]):
            t = math.radians(ang)
            u = q * math.cos(t) + r * math.sin(t) - off
            h = h + amp * np.exp(-(u * u) / (2.0 * w * w))
        return h
    raise InputError(f"unknown surface kind {kind!r}")


def _rotation(view: ViewSpec) -> FloatArray:
    """World->view rotation: azimuth about the vertical axis, then elevation."""
    az = math.radians(view.azimuth)
    el = math.radians(view.elevation)
    ca, sa = math.cos(az), math.sin(az)
    ce, se = math.cos(el), math.sin(el)
    ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
    return rx @ ry


@lru_cache(maxsize=64)
def depth_scale(spec: SceneSpec) -> float:
    """Scene-wide bound on the view-frame |z|, used to normalize depth into [-1, 1].

    One shared scale keeps every view's depth an affine function of the world
    point with the same constant, so inter-view transforms stay exact.
    """
    axis = np.linspace(-_SCALE_DOMAIN, _SCALE_DOMAIN, _SCALE_SAMPLES)
    q, r = np.meshgrid(axis, axis)
    h = surface_height(spec.surface_kind, spec.surface_params, q, r)
    reach = np.sqrt(q * q + r * r + h * h).max()
    return float(_SCALE_MARGIN * reach)


def view_transform(spec: SceneSpec, view_index: int) -> FloatArray:
    """4x4 affine map from homogeneous world points to [x_pix, y_pix, depth, 1]."""
    if not 0 <= view_index < len(spec.views):
        raise InputError(f"view index {view_index} out of range (scene has {len(spec.views)})")
    w, h = spec.resolution
    rot = _rotation(spec.views[view_index])
    sx, sy = (w - 1) / 2.0, (h - 1) / 2.0
    rho = depth_scale(spec)
    t = np.zeros((4, 4))
    t[0, :3] = sx * rot[0]
    t[0, 3] = sx
    t[1, :3] = sy * rot[1]
    t[1, 3] = sy
    t[2, :3] = rot[2] / rho
    t[3, 3] = 1.0
    return t


def pair_transform(spec: SceneSpec, src_view: int, tgt_view: int) -> FloatArray:
    """4x4 affine map from source-view lifted coordinates to target-view ones."""
    a = view_transform(spec, src_view)
    b = view_transform(spec, tgt_view)
    return b @ np.linalg.inv(a)


def gt_camera(spec: SceneSpec, src_view: int, tgt_view: int) -> AffineCamera:
    """Exact camera projecting source-view lifted points into the target view."""
    return AffineCamera(pair_transform(spec, src_view, tgt_view)[:2])


def render_depth(spec: SceneSpec, view_index: int) -> DepthField:
    """Normalized orthographic depth of the surface seen from one view.

    Inverts the projection per pixel: the world point under pixel (a, b)
    solves R2 (q, r) + h(q, r) c = (a, b) with R2 the upper-left 2x2 of the
    rotation and c its third column. The contraction iteration
    (q, r) <- R2^-1 [(a, b) - h c] converges whenever the rotated surface is
    still a graph over the view plane; otherwise the view is rejected.
    """
    if not 0 <= view_index < len(spec.views):
        raise InputError(f"view index {view_index} out of range (scene has {len(spec.views)})")
    w, h = spec.resolution
    view = spec.views[view_index]
    rot = _rotation(view)
    r2 = rot[:2, :2]
    det = float(np.linalg.det(r2))
    if abs(det) < 1e-3:
        raise RenderNotConvergedError(
            f"view (az={view.azimuth}, el={view.elevation}) is edge-on; "
            "the surface does not project as a height field"
        )
    r2inv = np.array([[r2[1, 1], -r2[0, 1]], [-r2[1, 0], r2[0, 0]]]) / det
    c = rot[:2, 2]

    a, b = np.meshgrid(np.linspace(-1.0, 1.0, w), np.linspace(-1.0, 1.0, h))
    q = r2inv[0, 0] * a + r2inv[0, 1] * b
    r = r2inv[1, 0] * a + r2inv[1, 1] * b
    converged = False
    for _ in range(_FIXED_POINT_MAX_ITERS):
        hh = surface_height(spec.surface_kind, spec.surface_params, q, r)
        tx = a - c[0] * hh
        ty = b - c[1] * hh
        qn = r2inv[0, 0] * tx + r2inv[0, 1] * ty
        rn = r2inv[1, 0] * tx + r2inv[1, 1] * ty
        delta = max(float(np.abs(qn - q).max()), float(np.abs(rn - r).max()))
        q, r = qn, rn
        if delta < _FIXED_POINT_TOL:
            converged = True
            break
    if not converged:
        raise RenderNotConvergedError(
            f"projection inversion did not converge for view "
            f"(az={view.azimuth}, el={view.elevation}); surface folds over itself"
        )
    hh = surface_height(spec.surface_kind, spec.surface_params, q, r)
    depth = (rot[2, 0] * q + rot[2, 1] * r + rot[2, 2] * hh) / depth_scale(spec)
    if np.abs(depth).max() > 1.0:
        raise RenderNotConvergedError("normalized depth left [-1, 1]; scene scale bound violated")
    return DepthField(depth)


def generate_correspondences(
    spec: SceneSpec, src_view: int, tgt_view: int, n_points: int
) -> CorrespondenceSet:
    """Exact source->target correspondences for one view pair.

    Samples ``n_points`` distinct source pixels uniformly (seeded by the scene
    seed and the pair), lifts them with the rendered source depth, and maps
    them through the exact inter-view transform. Every returned pair
    reprojects with zero residual under ``gt_camera(spec, src, tgt)``.
    """
    if src_view == tgt_view:
        raise InputError("source and target view must be distinct")
    if n_points < 4:
        raise InputError(f"need at least 4 correspondences, got {n_points}")
    w, h = spec.resolution
    total = w * h
    if n_points > total:
        raise InsufficientSupportError(
            f"requested {n_points} correspondences but the view has only {total} pixels"
        )
    field = render_depth(spec, src_view)

    rng = np.random.default_rng([spec.seed, src_view, tgt_view])
    flat = rng.choice(total, size=n_points, replace=False)
    xs = (flat % w).astype(np.float64)
    ys = (flat // w).astype(np.float64)
    d = field.values[(flat // w), (flat % w)]

    lifted = np.column_stack([xs, ys, d, np.ones(n_points)])
    mapped = lifted @ pair_transform(spec, src_view, tgt_view).T
    return CorrespondenceSet(np.column_stack([xs, ys]), mapped[:, :2])


def corrupt(corr: CorrespondenceSet, c: CorruptionSpec) -> CorrespondenceSet:
    """Apply Gaussian noise to every target, then displace a random subset.

    Deterministic given ``c.seed``; draw order is noise, then outlier index
    choice, then outlier directions. Source points are untouched. With zero
    sigma and zero fraction the set is returned unchanged.
    """
    if c.gaussian_sigma == 0.0 and c.outlier_fraction == 0.0:
        return corr
    rng = np.random.default_rng(c.seed)
    target = corr.target.copy()
    if c.gaussian_sigma > 0.0:
        target += rng.normal(0.0, c.gaussian_sigma, size=target.shape)
    n_out = math.ceil(c.outlier_fraction * len(corr))
    if n_out > 0:
        idx = rng.choice(len(corr), size=n_out, replace=False)
        angles = rng.uniform(0.0, 2.0 * math.pi, size=n_out)
        target[idx, 0] += c.outlier_magnitude * np.cos(angles)
        target[idx, 1] += c.outlier_magnitude * np.sin(angles)
    return CorrespondenceSet(corr.source, target)


# ---------------------------------------------------------------------------
# JSON serialization of scene specs (field names match the dataclasses).
# ---------------------------------------------------------------------------

def scene_to_dict(spec: SceneSpec) -> dict:
    return {
        "surface_kind": spec.surface_kind,
        "surface_params": list(spec.surface_params),
        "resolution": list(spec.resolution),
        "views": [{"azimuth": v.azimuth, "elevation": v.elevation} for v in spec.views],
        "seed": spec.seed,
    }


def scene_from_dict(doc: dict) -> SceneSpec:
    try:
        views = tuple(
            ViewSpec(azimuth=float(v["azimuth"]), elevation=float(v["elevation"]))
            for v in doc["views"]
        )
        return SceneSpec(
            surface_kind=doc["surface_kind"],
            surface_params=tuple(doc.get("surface_params", ())),
            resolution=tuple(doc["resolution"]),
            views=views,
            seed=int(doc["seed"]),
        )
    except KeyError as exc:
        raise InputError(f"scene document is missing field {exc.args[0]!r}") from exc
    except TypeError as exc:
        raise InputError(f"malformed scene document: {exc}") from exc


def load_scene(path: str | Path) -> SceneSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"scene document must be a JSON object, got {type(doc).__name__}")
    return scene_from_dict(doc)


def save_scene(spec: SceneSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(spec), indent=2, sort_keys=True) + "\n")
