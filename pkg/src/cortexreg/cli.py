"""Command-line front-end: one binary, six subcommands.

Configuration is resolved in three layers: built-in defaults, then a
key=value config file (--config), then explicit flags (flags win).  Every
run writes a manifest echoing the fully resolved configuration so results
can be reproduced from the manifest alone.

Exit codes: 0 success, 2 I/O error, 3 validation error, 4 numerical
failure (non-finite energy or a stalled line search).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .classifier import (ClassifierParams, classify_volume, load_annotation,
                         rasterize_annotation, surface_classifier)
from .camera import load_camera
from .errors import (ExtractionError, NumericalError, OutOfDomainError,
                     StallError, ValidationError)
from .fem import assemble_fem
from .fields import load_image, load_mask, load_volume, write_image, write_volume
from .fmm import redistance_fmm
from .optimizer import DescentConfig, cascadic_register
from .surface import extract_graph, load_surface, write_surface
from .testbed import (SceneParams, evaluate_registration, load_deformation,
                      load_scene, make_scene, write_deformation, write_scene)

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


def _read_config(path):
    """key=value lines; blank lines and #-comments ignored."""
    cfg = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"bad config line (need key=value): {raw!r}")
            k, v = line.split("=", 1)
            cfg[k.strip()] = v.strip()
    return cfg


def _resolve(args, config, key, cast, default):
    """Flag > config file > default."""
    flag_val = getattr(args, key, None)
    if flag_val is not None:
        return flag_val
    if key in config:
        return cast(config[key])
    return default


def _write_manifest(path, resolved: dict):
    with open(path, "w") as fh:
        fh.write("command=" + resolved.pop("command") + "\n")
        for k in sorted(resolved):
            fh.write(f"{k}={resolved[k]}\n")


def _manifest_path(out):
    if os.path.isdir(out):
        return os.path.join(out, "run_manifest.txt")
    return out + ".manifest.txt"


def _log(args, msg):
    if args.verbose:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommand bodies (raise; main() maps exceptions to exit codes)
# ---------------------------------------------------------------------------

def cmd_redistance(args, config):
    mask = load_mask(args.mask)
    band = _resolve(args, config, "band_width", float, 12.0)
    sdf = redistance_fmm(mask, band_width=band)
    write_volume(sdf, args.out)
    _write_manifest(_manifest_path(args.out), {
        "command": "redistance", "mask": args.mask, "out": args.out,
        "band_width": repr(band)})
    return EXIT_OK


def cmd_classify(args, config):
    sdf = load_volume(args.sdf)
    eps_h = _resolve(args, config, "eps_h", float, 8.0)
    beta = _resolve(args, config, "beta", float, 20.0)
    band_h = _resolve(args, config, "band_h", float, 2.0)
    params = ClassifierParams(eps=eps_h * sdf.h, beta=beta)
    C = classify_volume(sdf, params, band=band_h * sdf.h)
    write_volume(C, args.out)
    _write_manifest(_manifest_path(args.out), {
        "command": "classify", "sdf": args.sdf, "out": args.out,
        "eps_h": repr(eps_h), "beta": repr(beta), "band_h": repr(band_h)})
    return EXIT_OK


def cmd_extract(args, config):
    sdf = load_volume(args.sdf)
    frame = np.eye(3) if args.frame is None else \
        np.array(args.frame, dtype=float).reshape(3, 3)
    surf = extract_graph(sdf, tuple(args.region), frame, tuple(args.dims))
    write_surface(surf, args.out)
    _write_manifest(_manifest_path(args.out), {
        "command": "extract", "sdf": args.sdf, "out": args.out,
        "region": " ".join(repr(v) for v in args.region),
        "dims": f"{args.dims[0]} {args.dims[1]}",
        "frame": " ".join(repr(v) for v in frame.ravel())})
    return EXIT_OK


def _descent_config(args, config):
    kw = dict(
        levels=_resolve(args, config, "levels", int, DescentConfig.levels),
        max_iters=_resolve(args, config, "max_iters", int,
                           DescentConfig.max_iters),
        lam=_resolve(args, config, "lam", float, None),
        lambda_factor=_resolve(args, config, "lambda_factor", float,
                               DescentConfig.lambda_factor),
        sobolev_s=_resolve(args, config, "sobolev_s", float,
                           DescentConfig.sobolev_s),
        smooth_base=_resolve(args, config, "smooth_base", float,
                             DescentConfig.smooth_base),
        grad_tol_rel=_resolve(args, config, "grad_tol_rel", float,
                              DescentConfig.grad_tol_rel))
    return DescentConfig(**kw)


def cmd_register(args, config):
    surface = load_surface(args.surface)
    cam = load_camera(args.camera)
    f = load_image(args.f)
    if (args.g is None) == (args.annotation is None):
        raise ValidationError("give exactly one of --g / --annotation")
    if args.g is not None:
        g = load_image(args.g)
    else:
        ann = load_annotation(args.annotation)
        if args.image_dims is None:
            raise ValidationError("--annotation requires --image-dims")
        g = rasterize_annotation(ann, tuple(args.image_dims))
    cfg = _descent_config(args, config)

    os.makedirs(args.out_dir, exist_ok=True)
    psi, trace = cascadic_register(surface, f, g, cam, cfg)
    write_deformation(psi, os.path.join(args.out_dir, "psi.f3"))
    trace.write_csv(os.path.join(args.out_dir, "trace.csv"))

    if args.scene is not None:
        scene = load_scene(args.scene)
        metrics = evaluate_registration(psi, scene)
        with open(os.path.join(args.out_dir, "metrics.txt"), "w") as fh:
            fh.write("\n".join(metrics.lines()) + "\n")

    _write_manifest(_manifest_path(args.out_dir), {
        "command": "register", "surface": args.surface, "camera": args.camera,
        "f": args.f, "g": args.g or "", "annotation": args.annotation or "",
        "scene": args.scene or "", "out_dir": args.out_dir,
        "levels": cfg.levels, "max_iters": cfg.max_iters,
        "lam": repr(cfg.lam), "lambda_factor": repr(cfg.lambda_factor),
        "sobolev_s": repr(cfg.sobolev_s), "smooth_base": repr(cfg.smooth_base),
        "grad_tol_rel": repr(cfg.grad_tol_rel), "seed": args.seed})
    return EXIT_OK


def cmd_synthesize(args, config):
    params = SceneParams(
        dims=tuple(_resolve(args, config, "dims", lambda s: [int(x) for x in s.split()],
                            [129, 129])),
        image_dims=tuple(_resolve(args, config, "image_dims",
                                  lambda s: [int(x) for x in s.split()],
                                  [257, 257])),
        amplitude_h=_resolve(args, config, "amplitude_h", float,
                             SceneParams.amplitude_h),
        n_bumps=_resolve(args, config, "n_bumps", int, SceneParams.n_bumps),
        n_valleys=_resolve(args, config, "n_valleys", int,
                           SceneParams.n_valleys),
        n_disp_bumps=_resolve(args, config, "n_disp_bumps", int,
                              SceneParams.n_disp_bumps),
        stroke_sigma=_resolve(args, config, "stroke_sigma", float,
                              SceneParams.stroke_sigma),
        out_of_plane=_resolve(args, config, "out_of_plane", float,
                              SceneParams.out_of_plane),
        seed=args.seed if args.seed is not None else int(config.get("seed", 0)))
    scene = make_scene(params)
    write_scene(scene, args.out_dir)
    _write_manifest(_manifest_path(args.out_dir), {
        "command": "synthesize", "out_dir": args.out_dir,
        "seed": params.seed, "dims": f"{params.dims[0]} {params.dims[1]}",
        "image_dims": f"{params.image_dims[0]} {params.image_dims[1]}",
        "amplitude_h": repr(params.amplitude_h), "n_bumps": params.n_bumps,
        "n_valleys": params.n_valleys, "n_disp_bumps": params.n_disp_bumps,
        "stroke_sigma": repr(params.stroke_sigma),
        "out_of_plane": repr(params.out_of_plane)})
    return EXIT_OK


def cmd_evaluate(args, config):
    psi = load_deformation(args.result)
    scene = load_scene(args.scene)
    metrics = evaluate_registration(psi, scene)
    with open(args.out, "w") as fh:
        fh.write("\n".join(metrics.lines()) + "\n")
    _write_manifest(_manifest_path(args.out), {
        "command": "evaluate", "result": args.result, "scene": args.scene,
        "out": args.out})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="cortexreg",
        description="Crease classification and 2D-3D graph-surface registration")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("redistance", help="binary mask -> signed distance volume")
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--band-width", dest="band_width", type=float, default=None,
                   help="narrow band half-width in grid widths (default 12)")
    s.set_defaults(func=cmd_redistance)

    s = sub.add_parser("classify", help="SDF volume -> crease classifier volume")
    s.add_argument("--sdf", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eps-h", dest="eps_h", type=float, default=None,
                   help="moment ball radius in grid widths (default 8)")
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--band-h", dest="band_h", type=float, default=None,
                   help="evaluation band |d| <= band in grid widths (default 2)")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("extract", help="SDF volume -> graph surface")
    s.add_argument("--sdf", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--region", type=float, nargs=4, required=True,
                   metavar=("X0", "Y0", "X1", "Y1"))
    s.add_argument("--dims", type=int, nargs=2, required=True,
                   metavar=("NU", "NV"))
    s.add_argument("--frame", type=float, nargs=9, default=None,
                   help="row-major 3x3 orthonormal frame (default identity)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("register",
                       help="register a graph surface to a classifier image")
    s.add_argument("--surface", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--f", required=True, help="surface classifier (2D field)")
    s.add_argument("--g", help="projected classifier image (2D field)")
    s.add_argument("--annotation", help="polyline annotation file instead of --g")
    s.add_argument("--image-dims", dest="image_dims", type=int, nargs=2,
                   default=None, metavar=("W", "H"),
                   help="raster size when using --annotation")
    s.add_argument("--scene", default=None,
                   help="scene bundle dir; if given, ground-truth metrics are written")
    s.add_argument("--out-dir", dest="out_dir", required=True)
    s.add_argument("--levels", type=int, default=None)
    s.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    s.add_argument("--lam", type=float, default=None)
    s.add_argument("--lambda-factor", dest="lambda_factor", type=float,
                   default=None)
    s.add_argument("--sobolev-s", dest="sobolev_s", type=float, default=None)
    s.add_argument("--smooth-base", dest="smooth_base", type=float, default=None)
    s.add_argument("--grad-tol-rel", dest="grad_tol_rel", type=float,
                   default=None)
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("synthesize", help="generate a synthetic scene bundle")
    s.add_argument("--out-dir", dest="out_dir", required=True)
    s.add_argument("--dims", type=int, nargs=2, default=None)
    s.add_argument("--image-dims", dest="image_dims", type=int, nargs=2,
                   default=None)
    s.add_argument("--amplitude-h", dest="amplitude_h", type=float, default=None)
    s.add_argument("--n-bumps", dest="n_bumps", type=int, default=None)
    s.add_argument("--n-valleys", dest="n_valleys", type=int, default=None)
    s.add_argument("--n-disp-bumps", dest="n_disp_bumps", type=int, default=None)
    s.add_argument("--stroke-sigma", dest="stroke_sigma", type=float,
                   default=None)
    s.add_argument("--out-of-plane", dest="out_of_plane", type=float,
                   default=None)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("evaluate", help="score a registration against a scene")
    s.add_argument("--result", required=True, help="deformation field file")
    s.add_argument("--scene", required=True, help="scene bundle dir")
    s.add_argument("--out", required=True, help="metrics output file")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        config = _read_config(args.config) if args.config else {}
        code = args.func(args, config)
        _log(args, f"{args.command}: ok")
        return code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ExtractionError, OutOfDomainError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, StallError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
