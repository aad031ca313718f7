"""Matching and bending energies of the surface deformation, with gradient.

The unknown is a deformation psi mapping each parameter-grid node to a
world point; it is initialized as the identity on the surface,
psi(x) = (x, z(x)) in frame coordinates.

Matching: 0.5 * integral over omega of [g(P(psi)) - f]^2 A dx with lumped
nodal quadrature.  Regularization: 0.5 * integral of |D psi_1|^2 +
|D psi_2|^2 + |D(psi_3 - z)|^2 where D is the discrete Laplacian M^-1 L
zeroed on the domain boundary (realizing the natural boundary conditions
D psi = 0, d_nu D psi = 0).  The gradient below is the exact derivative of
these discrete sums in the lumped-mass inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .camera import Camera, jacobian, project
from .errors import NumericalError, ValidationError
from .fem import FemOperators, discrete_laplacian
from .fields import Field2


@dataclass(frozen=True)
class DeformationField:
    """Per-node world positions psi(x), shape (nu, nv, 3)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValidationError(f"deformation needs shape (nu, nv, 3), "
                                  f"got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("deformation contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def dims(self):
        return self.values.shape[:2]


@dataclass(frozen=True)
class EnergyReport:
    e_match: float
    e_reg: float
    e_total: float
    lam: float
    out_of_domain_fraction: float

    def lines(self):
        return [f"e_match={self.e_match!r}",
                f"e_reg={self.e_reg!r}",
                f"e_total={self.e_total!r}",
                f"lambda={self.lam!r}",
                f"out_of_domain_fraction={self.out_of_domain_fraction!r}"]


class ImageSampler:
    """Smooth sampler of a classifier image with exact analytic gradient.

    A bicubic spline through the pixel values keeps the energy C^1 so the
    descent gradient matches finite differences of the energy.  Query
    coordinates outside the image are clamped; the gradient component of a
    clamped coordinate is zero (the energy is locally constant there).
    """

    def __init__(self, img: Field2):
        nu, nv = img.dims
        self._nu, self._nv = nu, nv
        self._origin = img.origin
        self._spacing = img.spacing
        kx = min(3, nu - 1)
        ky = min(3, nv - 1)
        self._spline = RectBivariateSpline(
            np.arange(nu), np.arange(nv), img.values, kx=kx, ky=ky, s=0)

    def _to_index(self, uv):
        idx = (np.atleast_2d(uv) - self._origin) / self._spacing
        u = np.clip(idx[:, 0], 0.0, self._nu - 1.0)
        v = np.clip(idx[:, 1], 0.0, self._nv - 1.0)
        clamped = (u != idx[:, 0]) | (v != idx[:, 1])
        return u, v, clamped

    def values(self, uv):
        u, v, clamped = self._to_index(uv)
        return self._spline.ev(u, v), float(np.mean(clamped))

    def values_and_gradient(self, uv):
        u, v, clamped = self._to_index(uv)
        idx = (np.atleast_2d(uv) - self._origin) / self._spacing
        vals = self._spline.ev(u, v)
        gu = self._spline.ev(u, v, dx=1) / self._spacing[0]
        gv = self._spline.ev(u, v, dy=1) / self._spacing[1]
        gu[(idx[:, 0] < 0) | (idx[:, 0] > self._nu - 1)] = 0.0
        gv[(idx[:, 1] < 0) | (idx[:, 1] > self._nv - 1)] = 0.0
        return vals, np.column_stack([gu, gv]), float(np.mean(clamped))


def _as_sampler(g):
    return g if isinstance(g, ImageSampler) else ImageSampler(g)


def _flat(field2d):
    return np.asarray(field2d, dtype=float).ravel()


def match_energy(psi: DeformationField, f: Field2, g, cam: Camera,
                 area: np.ndarray, ops: FemOperators) -> float:
    """Lumped nodal quadrature of the classifier mismatch over the surface."""
    e, _ = match_energy_parts(psi, f, g, cam, area, ops)
    return e


def match_energy_parts(psi, f, g, cam, area, ops):
    sampler = _as_sampler(g)
    nu, nv = psi.dims
    if f.dims != (nu, nv) or area.shape != (nu, nv):
        raise ValidationError("field dims do not match the deformation grid")
    uv = project(cam, psi.values.reshape(-1, 3))
    gvals, out_frac = sampler.values(uv)
    r = gvals - _flat(f.values)
    e = 0.5 * float(np.sum(ops.mass * r * r * _flat(area)))
    return e, out_frac


def _reg_w(psi_flat3, z_flat, ops):
    """Boundary-zeroed discrete Laplacian of (psi_1, psi_2, psi_3 - z).

    The in-plane node coordinates are subtracted before applying the
    Laplacian: they lie in its kernel analytically, so this changes nothing
    mathematically, but evaluating on the displacement instead of the
    absolute position makes the energy exactly zero at the identity rather
    than zero up to the roundoff of L applied to a linear field.
    """
    nu, nv = ops.dims
    hu, hv = ops.spacing
    u = psi_flat3.copy()
    u[:, 0] -= np.repeat(np.arange(nu) * hu, nv)
    u[:, 1] -= np.tile(np.arange(nv) * hv, nu)
    u[:, 2] -= z_flat
    w = discrete_laplacian(ops, u)
    w[ops.boundary] = 0.0
    return w


def reg_energy(psi: DeformationField, z: np.ndarray, ops: FemOperators) -> float:
    """Bending-type prior: exactly zero at the identity initialization."""
    nu, nv = psi.dims
    if z.shape != (nu, nv):
        raise ValidationError("height field dims do not match the deformation")
    w = _reg_w(psi.values.reshape(-1, 3), z.ravel(), ops)
    return 0.5 * float(np.sum(ops.mass[:, None] * w * w))


def total_energy(psi, f, g, cam, area, z, ops, lam: float) -> EnergyReport:
    e_match, out_frac = match_energy_parts(psi, f, g, cam, area, ops)
    e_reg = reg_energy(psi, z, ops)
    e_total = e_match + lam * e_reg
    if not np.isfinite(e_total):
        raise NumericalError(f"non-finite energy: match={e_match}, reg={e_reg}")
    return EnergyReport(e_match, e_reg, e_total, lam, out_frac)


def gradient(psi, f, g, cam, area, z, ops, lam: float) -> np.ndarray:
    """Lumped-mass representation of the first variation, (nu, nv, 3)."""
    sampler = _as_sampler(g)
    nu, nv = psi.dims
    pts = psi.values.reshape(-1, 3)
    uv = project(cam, pts)
    gvals, ggrad, _ = sampler.values_and_gradient(uv)
    r = gvals - _flat(f.values)
    J = jacobian(cam, pts)                               # (n, 2, 3)
    pull = np.einsum("nij,ni->nj", J, ggrad)             # DP^T grad g
    G = (r * _flat(area))[:, None] * pull

    w = _reg_w(pts, z.ravel(), ops)
    G += lam * discrete_laplacian(ops, w)
    return G.reshape(nu, nv, 3)


def mass_norm2(ops: FemOperators, G: np.ndarray) -> float:
    """Squared lumped-mass norm of a nodal vector field (nu, nv, k)."""
    flat = G.reshape(ops.n_nodes, -1)
    return float(np.sum(ops.mass[:, None] * flat * flat))


def auto_lambda(e_match_identity: float, ops: FemOperators, z: np.ndarray,
                factor: float = 0.1) -> float:
    """Default regularization weight from a unit reference bump.

    lambda = factor * E_match(identity) / E_reg(identity + bump) where the
    bump displaces psi_3 by one grid width with Gaussian profile of width
    0.15 * domain extent.
    """
    nu, nv = ops.dims
    hu, hv = ops.spacing
    extent = max((nu - 1) * hu, (nv - 1) * hv)
    xx, yy = np.meshgrid(np.arange(nu) * hu, np.arange(nv) * hv, indexing="ij")
    cx, cy = (nu - 1) * hu / 2.0, (nv - 1) * hv / 2.0
    s = 0.15 * extent
    bump = min(hu, hv) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    u = np.zeros((nu * nv, 3))
    u[:, 2] = bump.ravel()
    w = discrete_laplacian(ops, u)
    w[ops.boundary] = 0.0
    e_ref = 0.5 * float(np.sum(ops.mass[:, None] * w * w))
    if e_ref <= 0:
        raise NumericalError("degenerate reference bump energy")
    if e_match_identity <= 0:
        return 1.0
    return factor * e_match_identity / e_ref
