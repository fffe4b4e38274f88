"""Benchmark case definitions and the model-dispatching runner.

Two built-in scenarios are provided.  ``compression``: a laterally confined
1 x 10 m column, suddenly loaded on its drained top surface.
``partial_compression``: a 10 x 10 m block loaded on the right half of the
top surface while only the left half drains.  Both can be solved with the
large-deformation incremental model or with the two linear comparators.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import linear, postproc, stepping
from .assembly import DirichletSet, LoadCase, Traction, step_traction
from .linear import NewmarkParams
from .materials import FluidParams, SolidParams
from .mesh import (
    Mesh2D,
    add_boundary_region,
    build_structured_grid,
    containing_element,
    nearest_node,
    nodes_where,
    pressure_nodes_where,
    update_coordinates,
)
from .postproc import CaseConfig, parse_config
from .stepping import RunResult, Schedule

__all__ = [
    "GRAVITY",
    "CaseSetup",
    "compression_case",
    "partial_compression_case",
    "case_from_config",
    "builtin_config_text",
    "run_case",
    "timeseries_columns",
]

GRAVITY = 9.81

# Reference permeability of the benchmarks, 0.1 / (g rho_f0).
_K0_BENCH = 0.1 / (GRAVITY * 1000.0)

_TEST_I_INI = f"""
[mesh]
nx = 1
ny = 10
lx = 1.0
ly = 10.0

[solid]
lambda = 29.0e6
mu = 7.0e6
rho_s0 = 2700.0
phi_s0 = 0.58

[fluid]
rho_f0 = 1000.0
kappa_f = 22.0e9
p0 = 0.0
k0 = {_K0_BENCH!r}
varkappa = 0.8

[bc]
preset = compression

[load]
hbar = 40.0e3

[schedule]
dt = 0.01
n_steps = 60
probes = top:0.5,10.0
probe_cell = 0.5,5.0

[model]
kind = nonlinear
"""

_TEST_II_INI = f"""
[mesh]
nx = 10
ny = 10
lx = 10.0
ly = 10.0

[solid]
lambda = 8.4e6
mu = 5.6e6
rho_s0 = 2700.0
phi_s0 = 0.58

[fluid]
rho_f0 = 1000.0
kappa_f = 22.0e9
p0 = 0.0
k0 = {_K0_BENCH!r}
varkappa = 0.8

[bc]
preset = partial_compression

[load]
hbar = 4.0e6

[schedule]
dt = 0.005
n_steps = 100
probes = L:5.0,10.0; R:10.0,10.0
probe_cell = 5.0,5.0

[model]
kind = nonlinear
"""

_BUILTIN_INI = {"compression": _TEST_I_INI, "partial_compression": _TEST_II_INI}


@dataclass(frozen=True)
class CaseSetup:
    """Fully-resolved simulation case ready to run."""

    name: str
    mesh: Mesh2D
    solid: SolidParams
    fluid: FluidParams
    bc: DirichletSet
    loads: LoadCase
    schedule: Schedule
    probe_names: tuple
    probe_cell: int
    model: str = "nonlinear"
    newmark: NewmarkParams = field(default_factory=NewmarkParams)
    hbar: float = 0.0


def builtin_config_text(case: str) -> str:
    """The INI text of a built-in benchmark case."""
    try:
        return _BUILTIN_INI[case]
    except KeyError:
        raise KeyError(f"unknown built-in case {case!r}") from None


def _close(a):
    return lambda x, v=a: abs(x - v) < 1e-9 * max(1.0, abs(v))


def _build_bc(mesh: Mesh2D, preset: str, lx: float, ly: float):
    """Dirichlet sets and the loaded-region name for a boundary-condition preset."""
    on_left = _close(0.0)
    on_right = _close(lx)
    on_bottom = _close(0.0)
    on_top = _close(ly)
    ux_nodes = nodes_where(mesh, lambda x: on_left(x[0]) or on_right(x[0]))
    uy_nodes = nodes_where(mesh, lambda x: on_bottom(x[1]))
    if preset == "compression":
        p_nodes = pressure_nodes_where(mesh, lambda x: on_top(x[1]))
        loaded = "top"
    elif preset == "partial_compression":
        p_nodes = pressure_nodes_where(
            mesh, lambda x: on_top(x[1]) and x[0] <= 0.5 * lx + 1e-9 * lx
        )
        mesh = add_boundary_region(
            mesh, "top_right", lambda m: on_top(m[1]) and m[0] > 0.5 * lx
        )
        loaded = "top_right"
    else:
        raise ValueError(f"unknown boundary-condition preset {preset!r}")
    bc = DirichletSet.build(
        displacement=[(ux_nodes, 0, 0.0), (uy_nodes, 1, 0.0)],
        pressure=[(p_nodes, 0.0)],
    )
    return mesh, bc, loaded


def case_from_config(cfg: CaseConfig, name: str = "from_config") -> CaseSetup:
    """Materialise a validated configuration into a runnable case."""
    mesh = build_structured_grid(cfg.nx, cfg.ny, cfg.lx, cfg.ly)
    mesh, bc, loaded = _build_bc(mesh, cfg.bc_preset, cfg.lx, cfg.ly)
    # sudden load: full magnitude as the first increment, held constant after
    loads = LoadCase(tractions={loaded: Traction(step_traction([0.0, -cfg.hbar]))})
    probes = cfg.probes or (("probe", (cfg.lx / 2, cfg.ly)),)
    probe_nodes = tuple(nearest_node(mesh, xy) for _, xy in probes)
    schedule = Schedule(dt=cfg.dt, n_steps=cfg.n_steps, probe_nodes=probe_nodes)
    return CaseSetup(
        name=name,
        mesh=mesh,
        solid=cfg.solid,
        fluid=cfg.fluid,
        bc=bc,
        loads=loads,
        schedule=schedule,
        probe_names=tuple(n for n, _ in probes),
        probe_cell=containing_element(mesh, cfg.probe_cell),
        model=cfg.model,
        newmark=cfg.newmark,
        hbar=cfg.hbar,
    )


def _builtin_case(name: str, model=None, hbar=None, dt=None, n_steps=None, probe=None) -> CaseSetup:
    cfg = parse_config(builtin_config_text(name))
    if hbar is not None:
        cfg = replace(cfg, hbar=float(hbar))
    if dt is not None:
        cfg = replace(cfg, dt=float(dt))
    if n_steps is not None:
        cfg = replace(cfg, n_steps=int(n_steps))
    if model is not None:
        if model not in ("nonlinear", "linear_bd", "linear_newmark"):
            raise ValueError(f"unknown model {model!r}")
        cfg = replace(cfg, model=model)
    if probe is not None:
        cfg = replace(cfg, probes=(("probe", tuple(probe)),))
    if cfg.dt <= 0:
        raise ValueError(f"dt must be > 0, got {cfg.dt}")
    if cfg.n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {cfg.n_steps}")
    return case_from_config(cfg, name=name)


def compression_case(model=None, hbar=None, dt=None, n_steps=None, probe=None) -> CaseSetup:
    """Confined-column benchmark (overridable load, step and model)."""
    return _builtin_case("compression", model, hbar, dt, n_steps, probe)


def partial_compression_case(model=None, hbar=None, dt=None, n_steps=None, probe=None) -> CaseSetup:
    """Partially loaded, partially drained block benchmark."""
    return _builtin_case("partial_compression", model, hbar, dt, n_steps, probe)


def _run_linear(case: CaseSetup) -> RunResult:
    system = linear.assemble_linear_biot(case.mesh, case.solid, case.fluid, case.bc)
    dt, n = case.schedule.dt, case.schedule.n_steps
    if case.model == "linear_bd":
        stepper = linear.LinearBDStepper(system, case.loads, dt)
    else:
        stepper = linear.NewmarkStepper(system, case.loads, dt, case.newmark)
    state = stepper.initial_state()

    probes = np.asarray(case.schedule.probe_nodes, dtype=np.int64)
    times = np.empty(n)
    probe_u = np.empty((n, probes.size, 2))
    J_hist = np.empty(n)
    W_hist = np.empty(n)
    psi_hist = np.empty(n)
    final_mesh = case.mesh
    for k in range(n):
        state = stepper.step(state)
        u = state.u.reshape(-1, 2)
        times[k] = state.t
        probe_u[k] = u[probes]
        final_mesh = update_coordinates(case.mesh, u)
        J_q, W_q = postproc.deformation_measures(final_mesh, case.solid, elements=[case.probe_cell])
        J_hist[k] = J_q.mean()
        W_hist[k] = W_q.mean()
        psi_hist[k] = postproc.dissipation(case.mesh, state.p, case.fluid, deformed=False)

    history = stepping.History(
        mesh=final_mesh,
        u_total=state.u.reshape(-1, 2),
        p_total=state.p,
        ubar=np.zeros_like(case.mesh.coords),
        ubar_prev=np.zeros_like(case.mesh.coords),
        pbar=np.zeros(case.mesh.n_pressure_nodes),
        t=state.t,
        k=n,
    )
    return RunResult(
        times=times,
        probe_u=probe_u,
        J_probe=J_hist,
        W_probe=W_hist,
        psi=psi_hist,
        history=history,
        probe_names=case.probe_names,
    )


def run_case(case: CaseSetup, snapshot_steps=()) -> RunResult:
    """Run a case with the model selected in its setup."""
    if case.model == "nonlinear":
        return stepping.run(
            case.mesh,
            case.solid,
            case.fluid,
            case.loads,
            case.bc,
            case.schedule,
            probe_cell=case.probe_cell,
            snapshot_steps=snapshot_steps,
            probe_names=case.probe_names,
        )
    if case.model in ("linear_bd", "linear_newmark"):
        return _run_linear(case)
    raise ValueError(f"unknown model {case.model!r}")


def timeseries_columns(result: RunResult) -> dict:
    """Time-series columns (time, probe displacements, J, W, dissipation)."""
    names = result.probe_names or tuple(f"p{i}" for i in range(result.probe_u.shape[1]))
    cols = {"time": result.times}
    for i, name in enumerate(names):
        cols[f"ux_{name}"] = result.probe_u[:, i, 0]
        cols[f"uy_{name}"] = result.probe_u[:, i, 1]
    cols["J_probe"] = result.J_probe
    cols["W_probe"] = result.W_probe
    cols["Psi"] = result.psi
    return cols
