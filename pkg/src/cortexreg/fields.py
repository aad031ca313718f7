"""Regular-grid scalar fields (3D volumes, 2D images) and their file format.

Files come in pairs: a plain-text header (key=value lines) and a raw
little-endian binary payload, x-fastest ordering.  Arrays are stored with
axis order (x, y[, z]), i.e. ``values[i, j, k]`` sits at
``origin + (i, j, k) * spacing``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError, ValidationError

_DTYPES = {
    "uint8": np.uint8,
    "float32": np.float32,
    "float64": np.float64,
}


def _validate_grid(values, spacing, origin, ndim):
    values = np.asarray(values)
    if values.ndim != ndim:
        raise ValidationError(f"expected {ndim}D values, got shape {values.shape}")
    if any(n < 2 for n in values.shape):
        raise ValidationError(f"dims must be >= 2 per axis, got {values.shape}")
    spacing = np.asarray(spacing, dtype=float)
    if spacing.ndim == 0:
        spacing = np.full(ndim, float(spacing))
    if spacing.shape != (ndim,) or np.any(spacing <= 0):
        raise ValidationError(f"bad spacing {spacing}")
    origin = np.asarray(origin, dtype=float)
    if origin.shape != (ndim,):
        raise ValidationError(f"bad origin {origin}")
    return values, spacing, origin


@dataclass(frozen=True)
class ScalarField3:
    """3D scalar field on a regular grid (holds SDFs and classifier volumes)."""

    values: np.ndarray          # (nx, ny, nz) float64
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        values, spacing, origin = _validate_grid(
            self.values, self.spacing, self.origin, 3)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValidationError("field contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.values.shape

    @property
    def h(self):
        """Isotropic grid width; rejects anisotropic spacing."""
        if not np.allclose(self.spacing, self.spacing[0], rtol=0, atol=1e-12):
            raise ValidationError(f"anisotropic spacing {self.spacing} not supported")
        return float(self.spacing[0])

    def bbox(self):
        lo = self.origin
        hi = self.origin + (np.array(self.dims) - 1) * self.spacing
        return lo, hi

    def to_index(self, pts):
        """World coordinates -> fractional index coordinates, shape (n, 3)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.origin) / self.spacing


@dataclass(frozen=True)
class BinaryMask3:
    """Boolean occupancy volume (True = inside the object)."""

    values: np.ndarray          # (nx, ny, nz) bool
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        values, spacing, origin = _validate_grid(
            self.values, self.spacing, self.origin, 3)
        object.__setattr__(self, "values", np.ascontiguousarray(values, dtype=bool))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.values.shape

    @property
    def h(self):
        if not np.allclose(self.spacing, self.spacing[0], rtol=0, atol=1e-12):
            raise ValidationError(f"anisotropic spacing {self.spacing} not supported")
        return float(self.spacing[0])


@dataclass(frozen=True)
class Field2:
    """2D scalar field on a regular grid; also serves as ClassifierImage."""

    values: np.ndarray          # (nu, nv) float64
    spacing: np.ndarray = field(default_factory=lambda: np.ones(2))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        values, spacing, origin = _validate_grid(
            self.values, self.spacing, self.origin, 2)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValidationError("field contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.values.shape

    def node_coords(self):
        """World coordinates of the grid nodes as two (nu, nv) arrays."""
        nu, nv = self.dims
        x = self.origin[0] + np.arange(nu) * self.spacing[0]
        y = self.origin[1] + np.arange(nv) * self.spacing[1]
        return np.meshgrid(x, y, indexing="ij")


# Backwards-friendly alias used by classifier/energy code.
ClassifierImage = Field2


def sample_trilinear(field: ScalarField3, p) -> float:
    """Trilinear interpolation at a world point inside the bounding box."""
    p = np.asarray(p, dtype=float)
    lo, hi = field.bbox()
    if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
        raise OutOfDomainError(f"point {p} outside grid bbox [{lo}, {hi}]")
    return float(sample_trilinear_clamped(field, p[None, :])[0])


def sample_trilinear_clamped(field: ScalarField3, pts) -> np.ndarray:
    """Vectorized trilinear sampling; coordinates clamped to the grid."""
    idx = field.to_index(pts)
    nmax = np.array(field.dims, dtype=float) - 1.0
    idx = np.clip(idx, 0.0, nmax)
    from scipy.ndimage import map_coordinates
    return map_coordinates(field.values, idx.T, order=1, mode="nearest")


def sample_bilinear_clamped(img: Field2, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    idx = (pts - img.origin) / img.spacing
    nmax = np.array(img.dims, dtype=float) - 1.0
    idx = np.clip(idx, 0.0, nmax)
    from scipy.ndimage import map_coordinates
    return map_coordinates(img.values, idx.T, order=1, mode="nearest")


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def _parse_header(path):
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"malformed header line: {line!r}")
            key, val = line.split("=", 1)
            kv[key.strip()] = val.strip()
    for key in ("dims", "dtype", "data"):
        if key not in kv:
            raise ValidationError(f"header missing key {key!r} in {path}")
    return kv


def _read_payload(header_path, kv, ndim):
    dims = tuple(int(v) for v in kv["dims"].split())
    if len(dims) != ndim:
        raise ValidationError(f"expected {ndim} dims, got {kv['dims']!r}")
    dtype = kv["dtype"]
    if dtype not in _DTYPES:
        raise ValidationError(f"unsupported dtype {dtype!r}")
    spacing = np.array([float(v) for v in kv.get("spacing", "1 " * ndim).split()])
    origin = np.array([float(v) for v in kv.get("origin", "0 " * ndim).split()])
    data_path = os.path.join(os.path.dirname(os.path.abspath(header_path)),
                             kv["data"])
    if not os.path.exists(data_path):
        raise FileNotFoundError(data_path)
    raw = np.fromfile(data_path, dtype=np.dtype(_DTYPES[dtype]).newbyteorder("<"))
    n_expected = int(np.prod(dims))
    if raw.size != n_expected:
        raise ValidationError(
            f"payload size mismatch: header dims {dims} need {n_expected} "
            f"values, file has {raw.size}")
    values = raw.reshape(dims, order="F")   # x-fastest on disk
    return values, spacing, origin


def load_volume(path) -> ScalarField3:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    kv = _parse_header(path)
    values, spacing, origin = _read_payload(path, kv, 3)
    return ScalarField3(values.astype(np.float64), spacing, origin)


def load_mask(path) -> BinaryMask3:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    kv = _parse_header(path)
    if kv["dtype"] != "uint8":
        raise ValidationError("mask files must use dtype uint8")
    values, spacing, origin = _read_payload(path, kv, 3)
    return BinaryMask3(values != 0, spacing, origin)


def load_image(path) -> Field2:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    kv = _parse_header(path)
    values, spacing, origin = _read_payload(path, kv, 2)
    return Field2(values.astype(np.float64), spacing, origin)


def _write_pair(path, values, spacing, origin, dtype):
    base = os.path.splitext(os.path.basename(path))[0]
    data_name = base + ".raw"
    data_path = os.path.join(os.path.dirname(os.path.abspath(path)), data_name)
    arr = np.asarray(values, dtype=np.dtype(_DTYPES[dtype]).newbyteorder("<"))
    arr.ravel(order="F").tofile(data_path)
    with open(path, "w") as fh:
        fh.write("dims=" + " ".join(str(n) for n in values.shape) + "\n")
        fh.write("spacing=" + " ".join(repr(float(s)) for s in spacing) + "\n")
        fh.write("origin=" + " ".join(repr(float(o)) for o in origin) + "\n")
        fh.write(f"dtype={dtype}\n")
        fh.write(f"data={data_name}\n")


def write_volume(field: ScalarField3, path, dtype="float64"):
    _write_pair(path, field.values, field.spacing, field.origin, dtype)


def write_mask(mask: BinaryMask3, path):
    _write_pair(path, mask.values.astype(np.uint8), mask.spacing, mask.origin,
                "uint8")


def write_image(img: Field2, path, dtype="float64"):
    _write_pair(path, img.values, img.spacing, img.origin, dtype)


def write_pgm(img: Field2, path):
    """8-bit binary PGM for visual inspection (values clipped to [0,1])."""
    vals = np.clip(img.values, 0.0, 1.0)
    pix = np.round(255.0 * vals).astype(np.uint8)
    nu, nv = img.dims
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nu} {nv}\n255\n".encode())
        # PGM is row-major top-to-bottom; rows are the v axis.
        fh.write(pix.T.tobytes())
