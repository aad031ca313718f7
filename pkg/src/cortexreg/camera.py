"""Pinhole and orthographic projection onto the image plane, with Jacobian.

Image-plane coordinates are continuous pixel coordinates; pixel centers
sit at integer positions, so the image domain is [0, width-1] x
[0, height-1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PERSPECTIVE = "perspective"
ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class Camera:
    mode: str
    rotation: np.ndarray        # world -> camera, orthonormal 3x3
    translation: np.ndarray     # (3,) world -> camera offset
    fu: float                   # focal length (perspective) / scale (ortho)
    fv: float
    cu: float
    cv: float
    width: int
    height: int

    def __post_init__(self):
        if self.mode not in (PERSPECTIVE, ORTHOGRAPHIC):
            raise ValidationError(f"unknown camera mode {self.mode!r}")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-10):
            raise ValidationError("rotation must be orthonormal within 1e-10")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValidationError("translation must be a 3-vector")
        if self.fu <= 0 or self.fv <= 0:
            raise ValidationError("focal lengths / scales must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def perspective(cls, fu, fv, cu, cv, width, height,
                    rotation=None, translation=None):
        return cls(PERSPECTIVE,
                   np.eye(3) if rotation is None else rotation,
                   np.zeros(3) if translation is None else translation,
                   fu, fv, cu, cv, width, height)

    @classmethod
    def orthographic(cls, su, sv, cu, cv, width, height,
                     rotation=None, translation=None):
        return cls(ORTHOGRAPHIC,
                   np.eye(3) if rotation is None else rotation,
                   np.zeros(3) if translation is None else translation,
                   su, sv, cu, cv, width, height)

    def to_camera(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.rotation.T + self.translation


def project(cam: Camera, X) -> np.ndarray:
    """World points (..., 3) -> pixel coordinates (..., 2)."""
    Xc = cam.to_camera(X)
    single = Xc.ndim == 1
    Xc = np.atleast_2d(Xc)
    if cam.mode == PERSPECTIVE:
        Z = Xc[..., 2]
        if np.any(Z <= 0):
            raise ValidationError("non-positive camera-frame depth")
        uv = np.stack([cam.fu * Xc[..., 0] / Z + cam.cu,
                       cam.fv * Xc[..., 1] / Z + cam.cv], axis=-1)
    else:
        uv = np.stack([cam.fu * Xc[..., 0] + cam.cu,
                       cam.fv * Xc[..., 1] + cam.cv], axis=-1)
    return uv[0] if single else uv


def depth(cam: Camera, X) -> np.ndarray:
    """Camera-frame depth (used for occlusion ordering)."""
    Xc = cam.to_camera(X)
    return np.atleast_2d(Xc)[..., 2]


def jacobian(cam: Camera, X) -> np.ndarray:
    """Analytic derivative of project w.r.t. the world point: (..., 2, 3)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xc = np.atleast_2d(cam.to_camera(X))
    R = cam.rotation
    n = Xc.shape[0]
    if cam.mode == PERSPECTIVE:
        Z = Xc[:, 2]
        if np.any(Z <= 0):
            raise ValidationError("non-positive camera-frame depth")
        J = np.empty((n, 2, 3))
        J[:, 0, :] = cam.fu * (R[0][None, :] * Z[:, None]
                               - Xc[:, 0][:, None] * R[2][None, :]) / (Z * Z)[:, None]
        J[:, 1, :] = cam.fv * (R[1][None, :] * Z[:, None]
                               - Xc[:, 1][:, None] * R[2][None, :]) / (Z * Z)[:, None]
    else:
        J = np.empty((n, 2, 3))
        J[:, 0, :] = cam.fu * R[0]
        J[:, 1, :] = cam.fv * R[1]
    return J[0] if single else J


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _point_in_quad(p, quad):
    """Point-in-quad via the two triangles (0,1,3) and (0,3,2)."""
    def in_tri(a, b, c):
        s1 = _cross2(b - a, p - a)
        s2 = _cross2(c - b, p - b)
        s3 = _cross2(a - c, p - c)
        return (s1 >= 0) & (s2 >= 0) & (s3 >= 0) | (s1 <= 0) & (s2 <= 0) & (s3 <= 0)
    a, b, c, d = quad
    return in_tri(a, b, d) | in_tri(a, d, c)


def check_no_self_occlusion(surface_or_points, cam: Camera):
    """True iff projected grid cells do not overlap (injective projection).

    Accepts a GraphSurface or a (nu, nv, 3) array of node positions.
    Returns (ok, offending) where offending lists pairs of non-adjacent
    cell indices whose projected footprints overlap.
    """
    if hasattr(surface_or_points, "identity_map"):
        pts = surface_or_points.identity_map()
    else:
        pts = np.asarray(surface_or_points, dtype=float)
    nu, nv, _ = pts.shape
    uv = project(cam, pts.reshape(-1, 3)).reshape(nu, nv, 2)

    # Rasterize each projected cell footprint at unit-pixel resolution and
    # flag pixels claimed by two cells that are not grid neighbors.
    lo = np.floor(uv.reshape(-1, 2).min(axis=0)).astype(int)
    hi = np.ceil(uv.reshape(-1, 2).max(axis=0)).astype(int)
    W = hi[0] - lo[0] + 1
    H = hi[1] - lo[1] + 1
    owner = -np.ones((W, H), dtype=np.int64)
    offending = []
    for i in range(nu - 1):
        for j in range(nv - 1):
            quad = np.array([uv[i, j], uv[i + 1, j], uv[i, j + 1],
                             uv[i + 1, j + 1]])
            qlo = np.floor(quad.min(axis=0)).astype(int)
            qhi = np.ceil(quad.max(axis=0)).astype(int)
            us = np.arange(qlo[0], qhi[0] + 1)
            vs = np.arange(qlo[1], qhi[1] + 1)
            if len(us) == 0 or len(vs) == 0:
                continue
            pu, pv = np.meshgrid(us, vs, indexing="ij")
            p = np.stack([pu.ravel(), pv.ravel()], axis=-1).astype(float)
            inside = _point_in_quad(p, quad)
            cell_id = i * (nv - 1) + j
            iu = pu.ravel()[inside] - lo[0]
            iv = pv.ravel()[inside] - lo[1]
            prev = owner[iu, iv]
            clash = prev >= 0
            if np.any(clash):
                for pid in np.unique(prev[clash]):
                    pi, pj = divmod(int(pid), nv - 1)
                    if abs(pi - i) > 1 or abs(pj - j) > 1:
                        offending.append(((pi, pj), (i, j)))
            owner[iu, iv] = cell_id
    return len(offending) == 0, offending


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_camera(cam: Camera, path):
    with open(path, "w") as fh:
        fh.write(f"mode={cam.mode}\n")
        fh.write("rotation=" + " ".join(repr(float(v))
                                        for v in cam.rotation.ravel()) + "\n")
        fh.write("translation=" + " ".join(repr(float(v))
                                           for v in cam.translation) + "\n")
        for key in ("fu", "fv", "cu", "cv"):
            fh.write(f"{key}={float(getattr(cam, key))!r}\n")
        fh.write(f"width={int(cam.width)}\n")
        fh.write(f"height={int(cam.height)}\n")


def load_camera(path) -> Camera:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    try:
        return Camera(kv["mode"],
                      np.array([float(v) for v in kv["rotation"].split()]).reshape(3, 3),
                      np.array([float(v) for v in kv["translation"].split()]),
                      float(kv["fu"]), float(kv["fv"]),
                      float(kv["cu"]), float(kv["cv"]),
                      int(kv["width"]), int(kv["height"]))
    except KeyError as exc:
        raise ValidationError(f"camera file {path} missing key {exc}") from exc
