"""Synthetic validation scenes: surface with known creases, known nonrigid
deformation, rendered projected classifier image, and error scoring.

Scene conventions: parameter domain [0, 1]^2 with an identity frame; the
camera is orthographic looking along the height axis.  Ground-truth
displacements are compactly supported away from the domain boundary, where
the natural boundary conditions give no data.  By default the displacement
is tangential (in-plane): the component along the viewing direction of a
single camera is unobservable, so the benchmark does not pretend to
recover it (an out_of_plane knob exists for studying that failure mode).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .camera import Camera, check_no_self_occlusion, load_camera, write_camera
from .classifier import Annotation, rasterize_annotation
from .energy import DeformationField
from .errors import ValidationError
from .fem import FemOperators, assemble_fem
from .fields import Field2, load_image, write_image
from .surface import GraphSurface, load_surface, write_surface


@dataclass(frozen=True)
class SceneParams:
    dims: tuple = (129, 129)
    image_dims: tuple = (257, 257)
    amplitude_h: float = 4.0         # displacement amplitude in grid widths
    n_bumps: int = 6
    n_valleys: int = 10
    n_disp_bumps: int = 3
    stroke_sigma: float = 3.0        # image pixels
    out_of_plane: float = 0.0        # fraction of amplitude along the view axis
    seed: int = 0


@dataclass(frozen=True)
class SyntheticScene:
    surface: GraphSurface
    crease_curves: tuple             # of (m, 2) arrays in omega coordinates
    psi_true: DeformationField
    camera: Camera
    f_true: Field2
    g_rendered: Field2
    seed: int
    params: SceneParams


@dataclass(frozen=True)
class ErrorMetrics:
    rms_surface_error: float         # units of the grid width h
    max_surface_error: float
    rms_image_residual: float
    initial_to_final_ratio: float

    def lines(self):
        return [f"rms_surface_error={self.rms_surface_error!r}",
                f"max_surface_error={self.max_surface_error!r}",
                f"rms_image_residual={self.rms_image_residual!r}",
                f"initial_to_final_ratio={self.initial_to_final_ratio!r}"]


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _boundary_taper(xx, yy, start=0.08, full=0.25):
    """1 inside, exactly 0 within `start` of the domain boundary."""
    d = np.minimum.reduce([xx, 1.0 - xx, yy, 1.0 - yy])
    return _smoothstep((d - start) / (full - start))


def _random_curve(rng, angle, n_samples=256, margin=0.12):
    """Smooth open curve crossing the domain at the given orientation."""
    c = rng.uniform(0.3, 0.7, size=2)
    direction = np.array([np.cos(angle), np.sin(angle)])
    normal = np.array([-direction[1], direction[0]])
    half = 1.2
    s = np.linspace(-half, half, n_samples)
    # pronounced wiggle: curvature along the stroke is what constrains the
    # tangential displacement component during registration
    amp = rng.uniform(0.08, 0.12)
    freq = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wiggle = amp * np.sin(freq * np.pi * s / half + phase)
    pts = c + s[:, None] * direction + wiggle[:, None] * normal
    keep = np.all((pts >= margin) & (pts <= 1.0 - margin), axis=1)
    pts = pts[keep]
    if len(pts) < 8:
        pts = np.linspace(c - 0.3 * direction, c + 0.3 * direction, 32)
    return pts


def make_synthetic_surface(dims, spacing=None, seed=0, n_bumps=6, n_valleys=4,
                           valley_depth_h=3.0, valley_width_h=4.0):
    """Random smooth height field carved by tent-profile valleys (sulci).

    Returns (GraphSurface, crease curve list).  Deterministic in the seed.
    """
    nu, nv = dims
    if nu < 33 or nv < 33:
        raise ValidationError("synthetic surface needs dims >= 33 per axis")
    h = 1.0 / (nu - 1) if spacing is None else float(spacing)
    rng = np.random.default_rng(seed)

    xx, yy = np.meshgrid(np.arange(nu) * h, np.arange(nv) * h, indexing="ij")
    z = np.zeros((nu, nv))
    for _ in range(n_bumps):
        c = rng.uniform(0.15, 0.85, size=2)
        s = rng.uniform(0.1, 0.25)
        a = rng.uniform(-5.0, 5.0) * h
        z += a * np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * s * s))

    from .classifier import polyline_distance
    curves = []
    angles = rng.permutation(n_valleys)
    pts_flat = np.column_stack([xx.ravel(), yy.ravel()])
    width = valley_width_h * h
    depth = valley_depth_h * h
    for k in range(n_valleys):
        angle = np.pi * (angles[k] + rng.uniform(-0.3, 0.3)) / n_valleys
        curve = _random_curve(rng, angle)
        curves.append(curve)
        d = polyline_distance(pts_flat, [curve]).reshape(nu, nv)
        z -= depth * np.maximum(0.0, 1.0 - d / width)

    surf = GraphSurface(z, spacing=np.array([h, h]), origin=np.zeros(2))
    return surf, tuple(curves)


def make_ground_truth_deformation(surface: GraphSurface, amplitude: float,
                                  seed=0, n_bumps=3,
                                  out_of_plane: float = 0.0) -> DeformationField:
    """Identity graph plus a smooth displacement, zero near the boundary.

    amplitude is the max displacement norm in world units.  out_of_plane
    scales an additional height-axis component relative to the in-plane
    amplitude (default 0: tangential deformation only).
    """
    nu, nv = surface.dims
    rng = np.random.default_rng(seed)
    xx, yy = surface.node_coords()
    ext = max((nu - 1) * surface.spacing[0], (nv - 1) * surface.spacing[1])
    xn, yn = xx / ext, yy / ext

    disp = np.zeros((nu, nv, 3))
    for _ in range(n_bumps):
        c = rng.uniform(0.25, 0.75, size=2)
        s = rng.uniform(0.25, 0.4)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        vec = np.array([np.cos(theta), np.sin(theta),
                        out_of_plane * rng.uniform(-1.0, 1.0)])
        prof = np.exp(-((xn - c[0]) ** 2 + (yn - c[1]) ** 2) / (2 * s * s))
        disp += prof[:, :, None] * vec

    disp *= _boundary_taper(xn, yn)[:, :, None]
    norms = np.linalg.norm(disp, axis=2)
    peak = norms.max()
    if amplitude > 0 and peak > 0:
        disp *= amplitude / peak
    elif amplitude == 0:
        disp[:] = 0.0
    return DeformationField(surface.identity_map() + disp)


def default_scene_camera(surface: GraphSurface, image_dims) -> Camera:
    """Orthographic top-down camera mapping the domain onto the image."""
    nu, nv = surface.dims
    wu = (nu - 1) * surface.spacing[0]
    wv = (nv - 1) * surface.spacing[1]
    su = (image_dims[0] - 1) / wu
    sv = (image_dims[1] - 1) / wv
    return Camera.orthographic(su, sv,
                               -su * surface.origin[0], -sv * surface.origin[1],
                               image_dims[0], image_dims[1])


def _interp_deformation(surface: GraphSurface, psi: DeformationField):
    nu, nv = surface.dims
    x = surface.origin[0] + np.arange(nu) * surface.spacing[0]
    y = surface.origin[1] + np.arange(nv) * surface.spacing[1]
    return RegularGridInterpolator((x, y), psi.values, method="linear")


def render_projected_classifier(surface: GraphSurface, curves,
                                psi_true: DeformationField, cam: Camera,
                                image_dims, stroke_sigma=3.0) -> Field2:
    """Project the deformed crease curves and rasterize the Gaussian ridges."""
    from .camera import project
    interp = _interp_deformation(surface, psi_true)
    polylines = []
    for curve in curves:
        world = interp(curve)
        polylines.append(project(cam, world))
    ann = Annotation(tuple(polylines), stroke_sigma)
    return rasterize_annotation(ann, image_dims)


def rasterize_surface_classifier(surface: GraphSurface, curves, cam: Camera,
                                 stroke_sigma_px: float) -> Field2:
    """Classifier f on the parameter grid, rasterized from the crease curves.

    The ridge width is matched physically to the image-space width: the
    image stroke sigma is converted through the projected node scale.
    """
    from .optimizer import _projected_node_scale
    px_per_node = _projected_node_scale(surface, cam)
    sigma_nodes = stroke_sigma_px / px_per_node
    idx_lines = tuple((c - surface.origin) / surface.spacing for c in curves)
    ann = Annotation(idx_lines, sigma_nodes)
    img = rasterize_annotation(ann, surface.dims)
    return Field2(img.values, surface.spacing, surface.origin)


def make_scene(params: SceneParams) -> SyntheticScene:
    surface, curves = make_synthetic_surface(
        params.dims, seed=params.seed, n_bumps=params.n_bumps,
        n_valleys=params.n_valleys)
    h = surface.spacing[0]
    psi_true = make_ground_truth_deformation(
        surface, params.amplitude_h * h, seed=params.seed + 1,
        n_bumps=params.n_disp_bumps, out_of_plane=params.out_of_plane)
    cam = default_scene_camera(surface, params.image_dims)
    ok, offending = check_no_self_occlusion(psi_true.values, cam)
    if not ok:
        raise ValidationError(
            f"ground-truth deformation self-occludes under the scene camera "
            f"({len(offending)} overlapping cell pairs)")
    g = render_projected_classifier(surface, curves, psi_true, cam,
                                    params.image_dims, params.stroke_sigma)
    f = rasterize_surface_classifier(surface, curves, cam, params.stroke_sigma)
    return SyntheticScene(surface, curves, psi_true, cam, f, g,
                          params.seed, params)


def interior_mask(dims, margin_frac=0.1) -> np.ndarray:
    """Nodes away from the boundary band, where the data constrains psi."""
    nu, nv = dims
    mu = max(1, int(round(margin_frac * (nu - 1))))
    mv = max(1, int(round(margin_frac * (nv - 1))))
    mask = np.zeros((nu, nv), dtype=bool)
    mask[mu:nu - mu, mv:nv - mv] = True
    return mask


def surface_error(psi: DeformationField, psi_true: DeformationField,
                  ops: FemOperators, h: float,
                  margin_frac=0.1) -> tuple:
    """Mass-weighted RMS and max deviation over interior nodes, in units of h."""
    if psi.dims != psi_true.dims:
        raise ValidationError("deformation dims mismatch")
    diff = np.linalg.norm(psi.values - psi_true.values, axis=2)
    mask = interior_mask(psi.dims, margin_frac).ravel()
    w = ops.mass * mask
    rms = np.sqrt(float(np.sum(w * diff.ravel() ** 2)) / float(np.sum(w)))
    mx = float(diff.ravel()[mask].max())
    return float(rms / h), float(mx / h)


def evaluate_registration(psi: DeformationField, scene: SyntheticScene,
                          margin_frac=0.1) -> ErrorMetrics:
    surf = scene.surface
    h = surf.spacing[0]
    ops = assemble_fem(surf.dims, surf.spacing)
    identity = DeformationField(surf.identity_map())
    rms0, _ = surface_error(identity, scene.psi_true, ops, h, margin_frac)
    rms, mx = surface_error(psi, scene.psi_true, ops, h, margin_frac)

    from .camera import project
    from .energy import ImageSampler
    uv = project(scene.camera, psi.values.reshape(-1, 3))
    gvals, _ = ImageSampler(scene.g_rendered).values(uv)
    resid = gvals.reshape(psi.dims) - scene.f_true.values
    mask = interior_mask(psi.dims, margin_frac)
    rms_img = float(np.sqrt(np.mean(resid[mask] ** 2)))
    ratio = float(rms / rms0) if rms0 > 0 else 0.0
    return ErrorMetrics(rms, mx, rms_img, ratio)


# ---------------------------------------------------------------------------
# Full-pipeline mode: occupancy volume -> SDF -> classifier -> f
# ---------------------------------------------------------------------------

def voxelize_surface(surface: GraphSurface, pad_h=10.0, z_margin_h=10.0):
    """Solid-below-the-graph occupancy mask on a cubic voxel grid.

    The voxel size equals the surface grid width.  The lateral domain is
    padded by pad_h grid widths with edge-continued heights so that
    classifier sampling balls near the border of the region of interest
    stay inside the volume (the classifier zeroes low-confidence values
    near the volume boundary, and that band must not reach the surface).
    """
    from .fields import BinaryMask3
    h = float(surface.spacing[0])
    pad = int(round(pad_h))
    z_pad = np.pad(surface.z, pad, mode="edge")
    z0 = float(surface.z.min() - z_margin_h * h)
    nz = int(np.ceil((surface.z.max() + z_margin_h * h - z0) / h)) + 1
    zs = z0 + np.arange(nz) * h
    inside = zs[None, None, :] <= z_pad[:, :, None]
    origin = np.array([surface.origin[0] - pad * h,
                       surface.origin[1] - pad * h, z0])
    return BinaryMask3(inside, spacing=np.full(3, h), origin=origin)


def pipeline_classifier_image(surface: GraphSurface, eps_h=2.0, band_h=2.0,
                              pad_h=10.0,
                              clamp_percentiles=(30.0, 99.5)) -> Field2:
    """Classifier image f on the surface via the full volumetric chain.

    Voxelize the surface, redistance the mask to a signed distance band,
    run the moment classifier, restrict it to the surface, and rescale.
    The clamp window is taken from percentiles of the restricted values:
    the low percentile estimates the flat-region baseline (which depends
    on the discretization, so a fixed absolute clamp is brittle), the high
    percentile saturates the crease ridges to 1.
    """
    from .classifier import (ClassifierParams, classify_volume,
                             surface_classifier)
    from .fmm import redistance_fmm
    h = float(surface.spacing[0])
    mask = voxelize_surface(surface, pad_h=pad_h)
    sdf = redistance_fmm(mask, band_width=float(pad_h))
    C = classify_volume(sdf, ClassifierParams(eps=eps_h * h), band=band_h * h)
    raw = surface_classifier(C, surface, 0.0, 1.0)
    lo = float(np.percentile(raw.values, clamp_percentiles[0]))
    hi = float(np.percentile(raw.values, clamp_percentiles[1]))
    if not lo < hi:
        raise ValidationError("degenerate classifier range on the surface")
    return surface_classifier(C, surface, lo, hi)


def pipeline_register(scene: SyntheticScene, max_iters=30):
    """Register a scene with the volumetric-classifier f instead of f_true.

    The classifier image carries ridge-position noise of roughly half a
    grid width; running the per-level descent to convergence makes the
    solution fit that noise.  A short iteration budget per level acts as
    iterative regularization, so the default is deliberately small.

    Returns (psi, trace, f).
    """
    from .optimizer import DescentConfig, cascadic_register
    f = pipeline_classifier_image(scene.surface)
    cfg = DescentConfig(max_iters=max_iters)
    psi, trace = cascadic_register(scene.surface, f, scene.g_rendered,
                                   scene.camera, cfg)
    return psi, trace, f


# ---------------------------------------------------------------------------
# Scene bundle I/O
# ---------------------------------------------------------------------------

def write_deformation(psi: DeformationField, path):
    """Three stacked 2D component fields in the volume format."""
    from .fields import ScalarField3, write_volume
    vol = ScalarField3(psi.values, spacing=np.ones(3), origin=np.zeros(3))
    write_volume(vol, path)


def load_deformation(path) -> DeformationField:
    from .fields import load_volume
    vol = load_volume(path)
    if vol.dims[2] != 3:
        raise ValidationError(f"deformation file must stack 3 components, "
                              f"got dims {vol.dims}")
    return DeformationField(vol.values)


def write_scene(scene: SyntheticScene, outdir):
    os.makedirs(outdir, exist_ok=True)
    write_surface(scene.surface, os.path.join(outdir, "surface.f2"))
    write_deformation(scene.psi_true, os.path.join(outdir, "psi_true.f3"))
    write_camera(scene.camera, os.path.join(outdir, "camera.txt"))
    write_image(scene.f_true, os.path.join(outdir, "f.f2"))
    write_image(scene.g_rendered, os.path.join(outdir, "g.f2"))
    p = scene.params
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write(f"seed={int(scene.seed)}\n")
        fh.write(f"dims={int(p.dims[0])} {int(p.dims[1])}\n")
        fh.write(f"image_dims={int(p.image_dims[0])} {int(p.image_dims[1])}\n")
        fh.write(f"amplitude_h={float(p.amplitude_h)!r}\n")
        fh.write(f"n_bumps={int(p.n_bumps)}\n")
        fh.write(f"n_valleys={int(p.n_valleys)}\n")
        fh.write(f"n_disp_bumps={int(p.n_disp_bumps)}\n")
        fh.write(f"stroke_sigma={float(p.stroke_sigma)!r}\n")
        fh.write(f"out_of_plane={float(p.out_of_plane)!r}\n")


def load_scene(path) -> SyntheticScene:
    mf = os.path.join(path, "manifest.txt")
    if not os.path.exists(mf):
        raise FileNotFoundError(mf)
    kv = {}
    with open(mf) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                kv[k] = v
    params = SceneParams(
        dims=tuple(int(x) for x in kv["dims"].split()),
        image_dims=tuple(int(x) for x in kv["image_dims"].split()),
        amplitude_h=float(kv["amplitude_h"]),
        n_bumps=int(kv["n_bumps"]),
        n_valleys=int(kv["n_valleys"]),
        n_disp_bumps=int(kv["n_disp_bumps"]),
        stroke_sigma=float(kv["stroke_sigma"]),
        out_of_plane=float(kv["out_of_plane"]),
        seed=int(kv["seed"]))
    surface = load_surface(os.path.join(path, "surface.f2"))
    psi_true = load_deformation(os.path.join(path, "psi_true.f3"))
    cam = load_camera(os.path.join(path, "camera.txt"))
    f = load_image(os.path.join(path, "f.f2"))
    g = load_image(os.path.join(path, "g.f2"))
    # crease curves are not persisted; downstream evaluation never needs them
    return SyntheticScene(surface, (), psi_true, cam, f, g,
                          int(kv["seed"]), params)


def manifest_hash(outdir) -> str:
    with open(os.path.join(outdir, "manifest.txt"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
