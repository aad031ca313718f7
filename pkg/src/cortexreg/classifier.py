"""Moment-based crease classification on implicit surfaces.

The crease score of a point x near the zero level set of a signed distance
field d is derived from the ball-averaged first moment

    M(x) = (1/|B_eps(x)|) * integral over B_eps(x) of d(y) (y - x) dy,

whose magnitude is large on flat surface patches and drops near edges and
corners.  The scalar classifier is 1 / (1 + beta * (|M| / eps^2)^2), so it
is close to 1 on creases (sulci) and small on flat regions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fields import (Field2, ScalarField3, sample_trilinear_clamped)


@dataclass(frozen=True)
class ClassifierParams:
    eps: float
    beta: float = 20.0
    quadrature_points_per_axis: int = 0   # 0 = auto: round(2*eps/h)

    def __post_init__(self):
        if self.eps <= 0 or self.beta <= 0:
            raise ValidationError("eps and beta must be positive")
        if self.quadrature_points_per_axis and self.quadrature_points_per_axis < 4:
            raise ValidationError("quadrature_points_per_axis must be >= 4")

    def validate_for_grid(self, h: float):
        if self.eps < 2.0 * h:
            raise ValidationError(
                f"eps={self.eps} below 2h={2 * h}: ball integral meaningless")

    def points_per_axis(self, h: float) -> int:
        if self.quadrature_points_per_axis:
            return self.quadrature_points_per_axis
        return max(4, int(round(2.0 * self.eps / h)))


def g_beta(t, beta: float = 20.0):
    """Decreasing crease response 1 / (1 + beta t^2)."""
    t = np.asarray(t, dtype=float)
    return 1.0 / (1.0 + beta * t * t)


def ball_quadrature(eps: float, q: int):
    """Midpoint-rule nodes strictly inside the eps-ball and their weight.

    Returns (offsets (m, 3), cell_volume).  The candidate lattice is the
    q^3 cell-center grid of the bounding cube, which is symmetric under
    negation and axis permutation.
    """
    step = 2.0 * eps / q
    c = (np.arange(q) + 0.5) * step - eps
    ox, oy, oz = np.meshgrid(c, c, c, indexing="ij")
    offsets = np.column_stack([ox.ravel(), oy.ravel(), oz.ravel()])
    inside = np.einsum("ij,ij->i", offsets, offsets) < eps * eps
    return offsets[inside], step ** 3


def moment_shift_many(sdf: ScalarField3, pts, eps: float,
                      q: int | None = None, chunk: int = 2048) -> np.ndarray:
    """Zero moment shift at many points, (n, 3) -> (n, 3)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h = sdf.h
    if q is None:
        q = max(4, int(round(2.0 * eps / h)))
    offsets, w = ball_quadrature(eps, q)
    vol = w * len(offsets)
    out = np.empty((len(pts), 3))
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        samples = (block[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
        d = sample_trilinear_clamped(sdf, samples).reshape(len(block), -1)
        out[s:s + chunk] = (w / vol) * (d @ offsets)
    return out


def zero_moment_shift(sdf: ScalarField3, x, eps: float,
                      q: int | None = None) -> np.ndarray:
    """Ball-averaged first moment of the signed distance field at x."""
    return moment_shift_many(sdf, np.asarray(x, dtype=float)[None, :], eps, q)[0]


def classify_points(sdf: ScalarField3, pts, params: ClassifierParams) -> np.ndarray:
    """Crease classifier values at arbitrary world points."""
    params.validate_for_grid(sdf.h)
    q = params.points_per_axis(sdf.h)
    m = moment_shift_many(sdf, pts, params.eps, q)
    t = np.linalg.norm(m, axis=1) / params.eps ** 2
    return g_beta(t, params.beta)


def classify_volume(sdf: ScalarField3, params: ClassifierParams,
                    band: float | None = None) -> ScalarField3:
    """Classifier volume: evaluated where |d| <= band, zero elsewhere.

    Voxels closer than eps to the domain boundary are flagged
    low-confidence and set to 0 (their quadrature ball exits the grid).
    """
    h = sdf.h
    params.validate_for_grid(h)
    if band is None:
        band = 2.0 * h
    sel = np.abs(sdf.values) <= band

    lo, hi = sdf.bbox()
    xs = sdf.origin[0] + np.arange(sdf.dims[0]) * h
    ys = sdf.origin[1] + np.arange(sdf.dims[1]) * h
    zs = sdf.origin[2] + np.arange(sdf.dims[2]) * h
    ok_x = (xs - lo[0] >= params.eps) & (hi[0] - xs >= params.eps)
    ok_y = (ys - lo[1] >= params.eps) & (hi[1] - ys >= params.eps)
    ok_z = (zs - lo[2] >= params.eps) & (hi[2] - zs >= params.eps)
    interior = ok_x[:, None, None] & ok_y[None, :, None] & ok_z[None, None, :]
    sel &= interior

    out = np.zeros(sdf.dims)
    if sel.any():
        idx = np.argwhere(sel)
        pts = sdf.origin + idx * h
        out[sel] = classify_points(sdf, pts, params)
    return ScalarField3(out, sdf.spacing, sdf.origin)


def surface_classifier(C: ScalarField3, surface, clamp_lo: float,
                       clamp_hi: float) -> Field2:
    """Restrict a classifier volume to a graph surface and rescale to [0,1]."""
    if not (0.0 <= clamp_lo < clamp_hi <= 1.0):
        raise ValidationError(f"need 0 <= clamp_lo < clamp_hi <= 1, "
                              f"got ({clamp_lo}, {clamp_hi})")
    pts = surface.world_points().reshape(-1, 3)
    vals = sample_trilinear_clamped(C, pts).reshape(surface.dims)
    f = np.clip((vals - clamp_lo) / (clamp_hi - clamp_lo), 0.0, 1.0)
    return Field2(f, surface.spacing, surface.origin)


# ---------------------------------------------------------------------------
# Annotation polylines (stand-in for expert sulci marking)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Annotation:
    """Polyline strokes in image pixel coordinates with a Gaussian profile."""

    polylines: tuple = field(default_factory=tuple)   # of (k, 2) arrays
    stroke_sigma: float = 3.0

    def __post_init__(self):
        if self.stroke_sigma <= 0:
            raise ValidationError("stroke_sigma must be positive")
        lines = tuple(np.asarray(p, dtype=float) for p in self.polylines)
        for p in lines:
            if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
                raise ValidationError("each polyline needs >= 2 points of 2 coords")
        object.__setattr__(self, "polylines", lines)


def polyline_distance(pts, polylines) -> np.ndarray:
    """Distance from each of (n, 2) points to the nearest polyline segment."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    best = np.full(len(pts), np.inf)
    for line in polylines:
        a = line[:-1]
        b = line[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        denom = np.where(denom == 0, 1.0, denom)
        # (n, seg) projection parameter, clamped to the segment
        ap = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nsj,sj->ns", ap, ab) / denom, 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d = np.linalg.norm(pts[:, None, :] - closest, axis=2)
        best = np.minimum(best, d.min(axis=1))
    return best


def rasterize_annotation(ann: Annotation, dims) -> Field2:
    """Gaussian ridge image, max-composed over strokes; 1 on centerlines."""
    nu, nv = dims
    if not ann.polylines:
        warnings.warn("empty annotation: rasterizing an all-zero image")
        return Field2(np.zeros((nu, nv)))
    uu, vv = np.meshgrid(np.arange(nu, dtype=float),
                         np.arange(nv, dtype=float), indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    d = polyline_distance(pts, ann.polylines)
    g = np.exp(-d * d / (2.0 * ann.stroke_sigma ** 2)).reshape(nu, nv)
    return Field2(g)


def load_annotation(path) -> Annotation:
    sigma = None
    lines = []
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            if raw.startswith("sigma="):
                sigma = float(raw.split("=", 1)[1])
                continue
            pts = []
            for tok in raw.split():
                x, y = tok.split(",")
                pts.append((float(x), float(y)))
            lines.append(np.array(pts))
    if sigma is None:
        raise ValidationError(f"annotation file {path} missing 'sigma=' header")
    return Annotation(tuple(lines), sigma)


def save_annotation(ann: Annotation, path):
    with open(path, "w") as fh:
        fh.write(f"sigma={float(ann.stroke_sigma)!r}\n")
        for line in ann.polylines:
            fh.write(" ".join(f"{float(x)!r},{float(y)!r}"
                              for x, y in line) + "\n")
