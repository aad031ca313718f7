"""Signed-distance redistancing of a binary mask by first-order fast marching.

Sign convention: d < 0 inside the object, so the outward normal is the
gradient of d.  The interface is initialized by linear interpolation of the
+-0.5 mask indicator along grid edges, which places the zero level set
halfway between voxel centers of opposite sign.
"""

from __future__ import annotations

import heapq

import numpy as np

from .errors import ValidationError
from .fields import BinaryMask3, ScalarField3

_NEIGHBOR_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                     (0, -1, 0), (0, 0, 1), (0, 0, -1))


def _initial_band(mask: np.ndarray, h: float):
    """Unsigned distances for voxels adjacent to a sign change."""
    dist = np.full(mask.shape, np.inf)
    # Crossing along any axis puts the interface at h/2 from both voxels;
    # multiple crossing axes combine like gradient components.
    n_axes = np.zeros(mask.shape, dtype=np.int8)
    for axis in range(3):
        a = mask
        b = np.roll(mask, -1, axis=axis)
        cross = a != b
        # roll wraps around; kill the wrapped slice
        sl = [slice(None)] * 3
        sl[axis] = slice(-1, None)
        cross[tuple(sl)] = False
        n_axes += cross
        n_axes += np.roll(cross, 1, axis=axis)
    band = n_axes > 0
    dist[band] = (h / 2.0) / np.sqrt(n_axes[band].astype(float))
    return dist, band


def _solve_quadratic(vals, h):
    """Upwind eikonal update from up to three accepted per-axis values."""
    vals = sorted(vals)
    t = vals[0] + h
    if len(vals) > 1 and t > vals[1]:
        a, b = vals[0], vals[1]
        # (t-a)^2 + (t-b)^2 = h^2
        s = a + b
        disc = 2.0 * h * h - (a - b) ** 2
        t = 0.5 * (s + np.sqrt(disc))
        if len(vals) > 2 and t > vals[2]:
            c = vals[2]
            s = a + b + c
            disc = s * s - 3.0 * (a * a + b * b + c * c - h * h)
            if disc >= 0.0:
                t = (s + np.sqrt(disc)) / 3.0
    return t


def redistance_fmm(mask: BinaryMask3, band_width: float = 12.0) -> ScalarField3:
    """Approximate signed distance to the mask boundary.

    band_width is in multiples of the grid width h; values beyond it are
    clamped to +-band_width*h.
    """
    m = mask.values
    if m.all():
        raise ValidationError("mask has no outside voxels")
    if not m.any():
        raise ValidationError("mask has no inside voxels")
    h = mask.h
    cap = band_width * h

    dist, frozen = _initial_band(m, h)
    shape = m.shape
    strides = (shape[1] * shape[2], shape[2], 1)

    t_flat = dist.ravel()
    status = np.zeros(t_flat.size, dtype=np.int8)   # 0 far, 1 trial, 2 accepted
    frozen_idx = np.flatnonzero(frozen.ravel())
    status[frozen_idx] = 2

    heap = []
    nx, ny, nz = shape

    def neighbors(flat):
        i, r = divmod(flat, strides[0])
        j, k = divmod(r, strides[1])
        for di, dj, dk in _NEIGHBOR_OFFSETS:
            ii, jj, kk = i + di, j + dj, k + dk
            if 0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz:
                yield ii * strides[0] + jj * strides[1] + kk

    def update(flat):
        i, r = divmod(flat, strides[0])
        j, k = divmod(r, strides[1])
        vals = []
        for axis, (lo, hi) in enumerate((( -1, 1),) * 3):
            best = np.inf
            for step in (lo, hi):
                idx = [i, j, k]
                idx[axis] += step
                if 0 <= idx[axis] < shape[axis]:
                    f = idx[0] * strides[0] + idx[1] * strides[1] + idx[2]
                    if status[f] == 2:
                        best = min(best, t_flat[f])
            if np.isfinite(best):
                vals.append(best)
        if not vals:
            return
        t = _solve_quadratic(vals, h)
        if t < t_flat[flat]:
            t_flat[flat] = t
            status[flat] = 1
            heapq.heappush(heap, (t, flat))

    for f in frozen_idx:
        for nb in neighbors(f):
            if status[nb] != 2:
                update(nb)

    while heap:
        t, flat = heapq.heappop(heap)
        if status[flat] == 2 or t > t_flat[flat]:
            continue
        if t > cap:
            break
        status[flat] = 2
        for nb in neighbors(flat):
            if status[nb] != 2:
                update(nb)

    d = t_flat.reshape(shape)
    d = np.minimum(d, cap)
    signed = np.where(m, -d, d)
    return ScalarField3(signed, mask.spacing, mask.origin)
