"""Bilinear finite elements on the rectangular parameter grid.

Nodes are indexed (i, j) with flat index i * nv + j.  The stiffness matrix
L is the positive semi-definite gradient form, so M^-1 L approximates the
negative analytic Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _element_stiffness(hu: float, hv: float) -> np.ndarray:
    """4x4 stiffness of one hu x hv cell, local node order
    (0,0), (1,0), (0,1), (1,1) in (di, dj)."""
    K = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dndx = np.array([-(1 - eta), (1 - eta), -eta, eta]) / hu
            dndy = np.array([-(1 - xi), -xi, (1 - xi), xi]) / hv
            K += 0.25 * hu * hv * (np.outer(dndx, dndx) + np.outer(dndy, dndy))
    return K


@dataclass(frozen=True)
class FemOperators:
    mass: np.ndarray            # (n,) lumped diagonal
    stiffness: sp.csr_matrix    # (n, n) symmetric PSD
    dims: tuple
    spacing: np.ndarray
    boundary: np.ndarray        # (n,) bool, nodes on the domain boundary

    @property
    def n_nodes(self):
        return self.mass.size


def assemble_fem(dims, spacing) -> FemOperators:
    nu, nv = dims
    if nu < 2 or nv < 2:
        raise ValidationError(f"degenerate grid dims {dims}")
    spacing = np.asarray(spacing, dtype=float)
    hu, hv = spacing
    n = nu * nv

    Ke = _element_stiffness(hu, hv)
    ei, ej = np.meshgrid(np.arange(nu - 1), np.arange(nv - 1), indexing="ij")
    base = (ei * nv + ej).ravel()                       # node (i, j) of each cell
    local = np.array([0, nv, 1, nv + 1])                # (0,0),(1,0),(0,1),(1,1)
    conn = base[:, None] + local[None, :]               # (cells, 4)

    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.tile(Ke.ravel(), conn.shape[0])
    L = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    mass = np.zeros(n)
    np.add.at(mass, conn.ravel(), 0.25 * hu * hv)

    ii, jj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    boundary = ((ii == 0) | (ii == nu - 1) | (jj == 0) | (jj == nv - 1)).ravel()
    return FemOperators(mass, L, (nu, nv), spacing, boundary)


def discrete_laplacian(ops: FemOperators, u: np.ndarray) -> np.ndarray:
    """M^-1 (L u), componentwise for (n,) or (n, k) input."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != ops.n_nodes:
        raise ValidationError(
            f"field size {u.shape[0]} does not match grid ({ops.n_nodes} nodes)")
    out = ops.stiffness @ u
    if out.ndim == 1:
        return out / ops.mass
    return out / ops.mass[:, None]
