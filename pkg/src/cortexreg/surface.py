"""Graph representation of a surface: height function z over a planar domain.

The parameter domain is a rectangle with its own 2D grid; an orthonormal
frame maps (x1, x2, height) coordinates to world space.  The surface is
single-valued along the height axis by construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import ExtractionError, ValidationError
from .fields import Field2, ScalarField3, load_image, write_image


@dataclass(frozen=True)
class GraphSurface:
    z: np.ndarray               # (nu, nv) heights
    spacing: np.ndarray = field(default_factory=lambda: np.ones(2))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    # frame columns: (x1 axis, x2 axis, height axis) in world coordinates

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        if z.ndim != 2 or any(n < 2 for n in z.shape):
            raise ValidationError(f"bad height grid shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValidationError("heights contain non-finite values")
        spacing = np.asarray(self.spacing, dtype=float)
        origin = np.asarray(self.origin, dtype=float)
        if spacing.shape != (2,) or np.any(spacing <= 0):
            raise ValidationError(f"bad spacing {spacing}")
        frame = np.asarray(self.frame, dtype=float)
        if frame.shape != (3, 3) or not np.allclose(
                frame.T @ frame, np.eye(3), atol=1e-10):
            raise ValidationError("frame must be orthonormal 3x3")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "frame", frame)

    @property
    def dims(self):
        return self.z.shape

    def node_coords(self):
        nu, nv = self.dims
        x = self.origin[0] + np.arange(nu) * self.spacing[0]
        y = self.origin[1] + np.arange(nv) * self.spacing[1]
        return np.meshgrid(x, y, indexing="ij")

    def identity_map(self) -> np.ndarray:
        """World positions (nu, nv, 3) of the undeformed surface nodes."""
        xx, yy = self.node_coords()
        local = np.stack([xx, yy, self.z], axis=-1)
        return local @ self.frame.T

    # kept separate for readability at call sites
    def world_points(self) -> np.ndarray:
        return self.identity_map()


def extract_graph(sdf: ScalarField3, region, frame, dims) -> GraphSurface:
    """Extract z(x) as the outermost zero crossing of d along the height axis.

    region = (x0, y0, x1, y1) in frame coordinates; rays march from the
    +height side of the grid toward -height, taking the first crossing
    from positive (outside) to negative (inside), refined by one secant
    step.  Nodes whose ray never crosses raise ExtractionError.
    """
    frame = np.asarray(frame, dtype=float)
    nu, nv = dims
    if nu < 2 or nv < 2:
        raise ValidationError(f"bad surface dims {dims}")
    x0, y0, x1, y1 = region
    if not (x1 > x0 and y1 > y0):
        raise ValidationError(f"degenerate region {region}")
    h = sdf.h
    xs = np.linspace(x0, x1, nu)
    ys = np.linspace(y0, y1, nv)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")

    # Height range: project the grid bbox corners onto the height axis.
    lo, hi = sdf.bbox()
    corners = np.array([[cx, cy, cz] for cx in (lo[0], hi[0])
                        for cy in (lo[1], hi[1]) for cz in (lo[2], hi[2])])
    t_axis = corners @ frame[:, 2]
    t_lo, t_hi = t_axis.min(), t_axis.max()
    n_steps = int(np.ceil((t_hi - t_lo) / (h / 2.0))) + 1
    ts = np.linspace(t_hi, t_lo, n_steps)      # march downward

    base = xx[..., None] * frame[:, 0] + yy[..., None] * frame[:, 1]
    d_along = np.empty((nu, nv, n_steps))
    for k, t in enumerate(ts):
        pts = base + t * frame[:, 2]
        idx = ((pts.reshape(-1, 3) - sdf.origin) / sdf.spacing).T
        d_along[:, :, k] = map_coordinates(
            sdf.values, idx, order=1, mode="constant",
            cval=np.nan).reshape(nu, nv)

    valid = np.isfinite(d_along)
    pos = valid & (d_along > 0)
    neg_next = np.roll(valid & (d_along <= 0), -1, axis=2)
    neg_next[:, :, -1] = False
    crossing = pos & neg_next
    has = crossing.any(axis=2)
    if not has.all():
        bad = [tuple(ij) for ij in np.argwhere(~has)]
        raise ExtractionError(
            f"no zero crossing along the height axis for {len(bad)} node(s); "
            f"first failing node {bad[0]}", bad)
    k0 = crossing.argmax(axis=2)
    ii, jj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    d0 = d_along[ii, jj, k0]
    d1 = d_along[ii, jj, k0 + 1]
    t0 = ts[k0]
    t1 = ts[k0 + 1]
    z = t0 - d0 * (t1 - t0) / (d1 - d0)
    return GraphSurface(z, spacing=np.array([xs[1] - xs[0], ys[1] - ys[0]]),
                        origin=np.array([x0, y0]), frame=frame)


def gradient_z(surface: GraphSurface):
    """Central-difference gradient of z (one-sided at the boundary)."""
    zx = np.gradient(surface.z, surface.spacing[0], axis=0)
    zy = np.gradient(surface.z, surface.spacing[1], axis=1)
    return zx, zy


def area_element(surface: GraphSurface) -> np.ndarray:
    """Metric factor sqrt(1 + |grad z|^2) at the grid nodes; >= 1."""
    zx, zy = gradient_z(surface)
    return np.sqrt(1.0 + zx * zx + zy * zy)


def laplacian_z(surface: GraphSurface, ops=None) -> np.ndarray:
    """Discrete Laplacian of z with the operator used by the energies.

    Returns M^-1 L z, which approximates the negative analytic Laplacian
    (stiffness L is positive semi-definite).  The energy terms only use
    differences of this operator applied to heights, so the global sign
    cancels there.
    """
    from .fem import assemble_fem, discrete_laplacian
    if ops is None:
        ops = assemble_fem(surface.dims, surface.spacing)
    return discrete_laplacian(ops, surface.z.ravel()).reshape(surface.dims)


# ---------------------------------------------------------------------------
# Serialization: z as a 2D field plus a text sidecar with the frame
# ---------------------------------------------------------------------------

def write_surface(surface: GraphSurface, path):
    write_image(Field2(surface.z, surface.spacing, surface.origin), path)
    side = os.path.splitext(path)[0] + ".frame"
    with open(side, "w") as fh:
        fh.write("frame=" + " ".join(repr(float(v))
                                     for v in surface.frame.ravel()) + "\n")


def load_surface(path) -> GraphSurface:
    img = load_image(path)
    side = os.path.splitext(path)[0] + ".frame"
    frame = np.eye(3)
    if os.path.exists(side):
        with open(side) as fh:
            for line in fh:
                if line.startswith("frame="):
                    frame = np.array([float(v) for v in
                                      line.split("=", 1)[1].split()]).reshape(3, 3)
    return GraphSurface(img.values, img.spacing, img.origin, frame)
