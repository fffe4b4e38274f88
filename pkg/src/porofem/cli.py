"""Command-line front end: run benchmark cases or compare two run directories.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 solver failure.
A comparison that exceeds the requested tolerance exits with 1.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import postproc
from .cases import (
    CaseSetup,
    case_from_config,
    compression_case,
    partial_compression_case,
    run_case,
    timeseries_columns,
)
from .linear import NewmarkParams, analytic_compression
from .materials import NonPhysicalStateError
from .mesh import InvertedElementError
from .postproc import ConfigError
from .stepping import SolverError

__all__ = ["main", "cli", "compare"]

EXIT_OK = 0
EXIT_COMPARE_FAILED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porofem",
        description="Large-deformation poroelasticity benchmarks "
        "(confined and partial compression) with linear reference models.",
    )
    parser.add_argument(
        "--case",
        choices=("compression", "partial_compression"),
        help="built-in benchmark case (ignored when --config is given)",
    )
    parser.add_argument("--config", help="INI case description (overrides --case)")
    parser.add_argument(
        "--model",
        choices=("nonlinear", "linear_bd", "linear_newmark"),
        help="solver model (default: from case/config)",
    )
    parser.add_argument("--load", type=float, help="surface load magnitude in Pa")
    parser.add_argument("--dt", type=float, help="time step in s")
    parser.add_argument("--steps", type=int, help="number of time steps")
    parser.add_argument("--output-dir", default="porofem_out", help="output directory")
    parser.add_argument("--probe", help="probe point as 'x,y' (overrides case probes)")
    parser.add_argument("--newmark-beta", type=float, help="Newmark beta parameter")
    parser.add_argument("--newmark-gamma", type=float, help="Newmark gamma parameter")
    parser.add_argument(
        "--compare",
        nargs=2,
        metavar=("RUN_A", "RUN_B"),
        help="compare the time series of two run directories and exit",
    )
    parser.add_argument(
        "--tol",
        type=float,
        default=None,
        help="relative tolerance for --compare (exit 1 when exceeded)",
    )
    return parser


def compare(run_a: str, run_b: str, tol: float | None = None):
    """Column-wise deviation report between two run directories.

    Returns (report_lines, passed); deviations are maximum absolute
    differences, relative deviations are normalised by the largest magnitude
    of the reference (second) column.
    """
    names_a, data_a = postproc.read_timeseries(os.path.join(run_a, "timeseries.csv"))
    names_b, data_b = postproc.read_timeseries(os.path.join(run_b, "timeseries.csv"))
    if names_a != names_b:
        raise ValueError(f"incompatible headers: {names_a} vs {names_b}")
    if data_a.shape != data_b.shape:
        raise ValueError(f"incompatible shapes: {data_a.shape} vs {data_b.shape}")
    lines = [f"comparing {run_a} vs {run_b} ({data_a.shape[0]} records)"]
    passed = True
    for j, name in enumerate(names_a):
        a, b = data_a[:, j], data_b[:, j]
        abs_dev = float(np.max(np.abs(a - b)))
        scale = float(np.max(np.abs(b)))
        rel_dev = abs_dev / scale if scale > 0 else 0.0
        verdict = ""
        if tol is not None and name != "time":
            ok = rel_dev <= tol
            passed &= ok
            verdict = "  PASS" if ok else "  FAIL"
        lines.append(f"  {name}: max|diff| = {abs_dev:.6e}, rel = {rel_dev:.6e}{verdict}")
    return lines, passed


def _resolve_case(args) -> CaseSetup:
    if args.config:
        cfg = postproc.read_config(args.config)
        builder = lambda **kw: case_from_config(_override_cfg(cfg, **kw), name="from_config")
    elif args.case == "compression":
        builder = compression_case
    elif args.case == "partial_compression":
        builder = partial_compression_case
    else:
        raise ConfigError("one of --case or --config is required")
    probe = None
    if args.probe is not None:
        parts = args.probe.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--probe: expected 'x,y', got {args.probe!r}")
        probe = (float(parts[0]), float(parts[1]))
    case = builder(
        model=args.model, hbar=args.load, dt=args.dt, n_steps=args.steps, probe=probe
    )
    if args.newmark_beta is not None or args.newmark_gamma is not None:
        nm = NewmarkParams(
            beta=args.newmark_beta if args.newmark_beta is not None else case.newmark.beta,
            gamma=args.newmark_gamma if args.newmark_gamma is not None else case.newmark.gamma,
        )
        case = type(case)(**{**case.__dict__, "newmark": nm})
    return case


def _override_cfg(cfg, model=None, hbar=None, dt=None, n_steps=None, probe=None):
    from dataclasses import replace

    if model is not None:
        cfg = replace(cfg, model=model)
    if hbar is not None:
        cfg = replace(cfg, hbar=float(hbar))
    if dt is not None:
        cfg = replace(cfg, dt=float(dt))
    if n_steps is not None:
        cfg = replace(cfg, n_steps=int(n_steps))
    if probe is not None:
        cfg = replace(cfg, probes=(("probe", tuple(probe)),))
    return cfg


def _write_outputs(case: CaseSetup, result, outdir: str):
    os.makedirs(outdir, exist_ok=True)
    postproc.write_timeseries(
        os.path.join(outdir, "timeseries.csv"), timeseries_columns(result)
    )
    history = result.history
    mesh = history.mesh
    J_q, W_q = postproc.deformation_measures(mesh, case.solid)
    point_data = {
        "displacement": history.u_total,
        "pressure": postproc.pressure_on_q2_nodes(mesh, history.p_total),
    }
    cell_data = {
        "J": J_q.mean(axis=1),
        "W": W_q.mean(axis=1),
        "seepage_magnitude": postproc.seepage_magnitude_cells(mesh, history.p_total, case.fluid),
    }
    postproc.write_snapshot(
        os.path.join(outdir, "final.vtk"), mesh, point_data, cell_data,
        title=f"porofem {case.name} {case.model}",
    )


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.compare:
        try:
            lines, passed = compare(args.compare[0], args.compare[1], args.tol)
        except (OSError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_VALIDATION
        print("\n".join(lines))
        return EXIT_OK if passed else EXIT_COMPARE_FAILED

    try:
        case = _resolve_case(args)
    except (ConfigError, ValueError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        result = run_case(case)
    except (SolverError, InvertedElementError, NonPhysicalStateError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER

    outdir = args.output_dir
    _write_outputs(case, result, outdir)

    sched = case.schedule
    print(
        f"run summary: case={case.name} model={case.model} load={case.hbar:g} "
        f"dt={sched.dt:g} steps={sched.n_steps} output-dir={outdir}"
    )
    for i, name in enumerate(case.probe_names):
        ux, uy = result.probe_u[-1, i]
        print(f"  probe {name}: u = ({ux:.6e}, {uy:.6e}) m at t = {result.times[-1]:g} s")
    if case.name == "compression":
        e_y = analytic_compression(case.solid.lam, case.solid.mu, case.hbar)
        ly = case.mesh.coords0[:, 1].max()
        u_exact = e_y * ly
        u_num = result.probe_u[-1, 0, 1]
        dev = abs(u_num - u_exact) / abs(u_exact) if u_exact != 0 else 0.0
        print(
            f"  steady-state compression: computed uy = {u_num:.6e} m, "
            f"analytic {u_exact:.6e} m, deviation {dev:.3%}"
        )
    return EXIT_OK


def cli() -> None:
    """Console-script wrapper."""
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
