"""Command-line front end.

Subcommands: phantom, project, backproject, reconstruct, compare.  Every
command takes a geometry config file, writes its outputs plus a JSON run
manifest, and is deterministic given (config, inputs, worker count).

Exit codes: 0 success, 2 usage/config error, 3 IO/format error,
4 solver breakdown.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib.metadata import PackageNotFoundError, version as pkg_version

import numpy as np

from . import io as kio
from .analysis import iterations_to_tolerance
from .geometry import ConfigError, GeometryError, load_config
from .operator import CbctOperator, GeometryMismatchError
from .phantom import generate_phantom, load_ellipsoids, shepp_logan_3d
from .solvers import (
    SolverConfig,
    SolverConfigError,
    DegenerateOperatorError,
    solve,
    write_history_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BREAKDOWN = 4


def _version() -> str:
    try:
        return pkg_version("cbctkit")
    except PackageNotFoundError:
        return "unknown"


def _write_manifest(path, command: str, config_path, params: dict, workers: int) -> None:
    manifest = {
        "command": command,
        "config": str(config_path),
        "parameters": params,
        "seed": None,
        "worker_count": workers,
        "version": _version(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_box(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected lo,hi")
    return float(parts[0]), float(parts[1])


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbctkit", description="Matrix-free cone-beam CT projection and reconstruction"
    )
    parser.add_argument("--workers", type=int, default=8,
                        help="operator worker count (fixes the reduction layout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="voxelize an ellipsoid phantom")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--ellipsoids", help="text table, one ellipsoid per line "
                                        "(default: built-in 3D Shepp-Logan)")

    p = sub.add_parser("project", help="forward-project a volume file")
    p.add_argument("config")
    p.add_argument("--vol", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backproject", help="backproject a projection file")
    p.add_argument("config")
    p.add_argument("--prj", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="iterative reconstruction")
    p.add_argument("config")
    p.add_argument("--prj", required=True)
    p.add_argument("--method", required=True, choices=["cgls", "lsqr", "sirt", "psirt"])
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--err", type=float, default=0.0,
                   help="relative discrepancy stop tolerance (0 = iterate to --iters)")
    p.add_argument("--out", required=True)
    p.add_argument("--x0", help="initial guess volume file")
    p.add_argument("--lambda", dest="tikhonov_lambda", type=float, default=0.0)
    p.add_argument("--jacobi", action="store_true")
    p.add_argument("--box", type=_parse_box, metavar="LO,HI")
    p.add_argument("--relax", type=float, default=1.0)
    p.add_argument("--true-every", type=int, default=0)
    p.add_argument("--csv", help="write convergence history CSV here")

    p = sub.add_parser("compare", help="run CGLS and PSIRT side by side")
    p.add_argument("config")
    p.add_argument("--prj", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--outdir", required=True)

    return parser


def _cmd_phantom(args) -> int:
    vol_geom, _ = load_config(args.config)
    ellipsoids = load_ellipsoids(args.ellipsoids) if args.ellipsoids else shepp_logan_3d()
    vol = generate_phantom(ellipsoids, vol_geom)
    kio.write_volume(args.out, vol)
    _write_manifest(args.out + ".manifest.json", "phantom", args.config,
                    {"out": args.out, "ellipsoids": args.ellipsoids}, args.workers)
    return EXIT_OK


def _cmd_project(args) -> int:
    vol_geom, traj = load_config(args.config)
    op = CbctOperator(vol_geom, traj, workers=args.workers)
    vol = kio.read_volume(args.vol, geometry=vol_geom)
    proj = op.project(vol)
    kio.write_projections(args.out, proj)
    _write_manifest(args.out + ".manifest.json", "project", args.config,
                    {"vol": args.vol, "out": args.out}, args.workers)
    return EXIT_OK


def _cmd_backproject(args) -> int:
    vol_geom, traj = load_config(args.config)
    op = CbctOperator(vol_geom, traj, workers=args.workers)
    proj = kio.read_projections(args.prj, trajectory=traj)
    vol = op.backproject(proj)
    kio.write_volume(args.out, vol)
    _write_manifest(args.out + ".manifest.json", "backproject", args.config,
                    {"prj": args.prj, "out": args.out}, args.workers)
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    vol_geom, traj = load_config(args.config)
    op = CbctOperator(vol_geom, traj, workers=args.workers)
    proj = kio.read_projections(args.prj, trajectory=traj)
    x0 = kio.read_volume(args.x0, geometry=vol_geom) if args.x0 else None
    cfg = SolverConfig(
        method=args.method,
        max_iterations=args.iters,
        rel_discrepancy_tol=args.err,
        initial_x0=x0,
        tikhonov_lambda=args.tikhonov_lambda,
        jacobi_precondition=args.jacobi,
        box_bounds=args.box,
        relaxation=args.relax,
        true_discrepancy_every=args.true_every,
    )
    cfg.validate()
    report = solve(op, proj, cfg)
    kio.write_volume(args.out, report.final_x)
    if args.csv:
        write_history_csv(report.history, args.csv)
    _write_manifest(
        args.out + ".manifest.json", "reconstruct", args.config,
        {
            "prj": args.prj,
            "method": args.method,
            "iters": args.iters,
            "err": args.err,
            "out": args.out,
            "x0": args.x0,
            "lambda": args.tikhonov_lambda,
            "jacobi": args.jacobi,
            "box": list(args.box) if args.box else None,
            "relax": args.relax,
            "true_every": args.true_every,
            "csv": args.csv,
            "iterations": report.iterations,
            "final_discrepancy_norm": report.final_discrepancy_norm,
        },
        args.workers,
    )
    if report.breakdown:
        return EXIT_BREAKDOWN
    return EXIT_OK


def _cmd_compare(args) -> int:
    import os

    if args.iters < 1:
        raise SolverConfigError("--iters must be >= 1")
    vol_geom, traj = load_config(args.config)
    op = CbctOperator(vol_geom, traj, workers=args.workers)
    proj = kio.read_projections(args.prj, trajectory=traj)
    os.makedirs(args.outdir, exist_ok=True)

    results = {}
    for method in ("cgls", "psirt"):
        cfg = SolverConfig(method=method, max_iterations=args.iters)
        report = solve(op, proj, cfg)
        write_history_csv(report.history, os.path.join(args.outdir, f"{method}.csv"))
        kio.export_slice_pgm(
            report.final_x, "z", vol_geom.nz // 2, (0.0, 1.0),
            os.path.join(args.outdir, f"{method}_center_slice.pgm"),
        )
        results[method] = report

    lines = []
    for method, report in results.items():
        e_final = report.history[-1].rel_discrepancy
        reached = iterations_to_tolerance(report.history, args.tol)
        lines.append(f"e_{method} = {e_final!r}")
        lines.append(f"iters_to_tol_{method} = {reached if reached is not None else 'none'}")
    n_cgls = iterations_to_tolerance(results["cgls"].history, args.tol)
    n_psirt = iterations_to_tolerance(results["psirt"].history, args.tol)
    if n_cgls and n_psirt:
        lines.append(f"iteration_ratio_psirt_over_cgls = {n_psirt / n_cgls!r}")
    else:
        lines.append("iteration_ratio_psirt_over_cgls = none")
    lines.append(f"tol = {args.tol!r}")
    lines.append(f"iters = {args.iters}")
    with open(os.path.join(args.outdir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(
        os.path.join(args.outdir, "manifest.json"), "compare", args.config,
        {"prj": args.prj, "iters": args.iters, "tol": args.tol, "outdir": args.outdir},
        args.workers,
    )
    return EXIT_OK


_COMMANDS = {
    "phantom": _cmd_phantom,
    "project": _cmd_project,
    "backproject": _cmd_backproject,
    "reconstruct": _cmd_reconstruct,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (kio.FormatError, GeometryMismatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DegenerateOperatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except (ConfigError, GeometryError, SolverConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
