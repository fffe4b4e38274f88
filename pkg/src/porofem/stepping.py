"""Implicit time loop: initialization, predictor-corrector steps, block solves.

One step performs exactly one predictor and one corrector solve.  The
predictor linearises at the configuration of t_k; its increment builds the
mid-step configuration on which the corrector is assembled.  The new state
advances by the average of the two increments, which also equals the
corrected mid-step state extrapolated over the full step.  Only the last two
displacement increments are kept, so storage stays at three consecutive time
levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import postproc
from .assembly import (
    BlockSystem,
    DirichletSet,
    LoadCase,
    apply_dirichlet,
    assemble_corrector,
    assemble_initial,
    assemble_predictor,
    constrain_system,
)
from .materials import FluidParams, SolidParams
from .mesh import InvertedElementError, Mesh2D, update_coordinates

__all__ = [
    "SolverError",
    "History",
    "Schedule",
    "StepResult",
    "RunResult",
    "solve_block",
    "initialize",
    "step",
    "run",
]

_RESIDUAL_RTOL = 1e-10


class SolverError(RuntimeError):
    """Singular or inaccurate linear solve."""


@dataclass(frozen=True)
class History:
    """State and backward differences carried between steps."""

    mesh: Mesh2D
    u_total: np.ndarray
    p_total: np.ndarray
    ubar: np.ndarray
    ubar_prev: np.ndarray
    pbar: np.ndarray
    t: float
    k: int


@dataclass(frozen=True)
class Schedule:
    """Uniform time discretisation with optional probe nodes."""

    dt: float
    n_steps: int
    probe_nodes: tuple = ()

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")


@dataclass(frozen=True)
class StepResult:
    """Advanced history plus the raw predictor and corrector increments."""

    history: History
    u_pred: np.ndarray
    p_pred: np.ndarray
    u_corr: np.ndarray
    p_corr: np.ndarray


@dataclass
class RunResult:
    """Per-step probe records and the final state of a run."""

    times: np.ndarray
    probe_u: np.ndarray
    J_probe: np.ndarray
    W_probe: np.ndarray
    psi: np.ndarray
    history: History
    probe_names: tuple = ()
    snapshots: list = field(default_factory=list)


def solve_block(system: BlockSystem):
    """Monolithic direct solve of the constrained block system.

    Returns the displacement increment reshaped to (n_nodes, 2) and the
    pressure increment.  Raises :class:`SolverError` on a singular matrix or
    when the relative residual exceeds 1e-10.
    """
    A = system.matrix().tocsc()
    b = system.rhs()
    with np.errstate(divide="ignore", invalid="ignore"):
        x = spla.spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise SolverError("block solve produced non-finite entries (singular system?)")
    bnorm = np.linalg.norm(b)
    if bnorm > 0.0:
        rel = np.linalg.norm(A @ x - b) / bnorm
        if rel > _RESIDUAL_RTOL:
            raise SolverError(f"block solve residual {rel:.3e} exceeds {_RESIDUAL_RTOL:.1e}")
    n_u = system.n_u
    return x[:n_u].reshape(-1, 2), x[n_u:]


def initialize(
    mesh0: Mesh2D,
    u0,
    v0,
    p0,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    bc: DirichletSet,
    dt: float,
) -> History:
    """Start-up history from the initial conditions.

    Solves for the initial acceleration and pressure rate, then seeds the
    backward differences: ubar = v0 dt, ubar_prev = ubar - accel dt^2 and
    pbar = pdot dt.  Prescribed boundary increments are assumed homogeneous,
    so constrained accelerations and rates vanish.
    """
    u0 = np.zeros_like(mesh0.coords) if u0 is None else np.asarray(u0, dtype=float)
    v0 = np.zeros_like(mesh0.coords) if v0 is None else np.asarray(v0, dtype=float)
    p0 = (
        np.zeros(mesh0.n_pressure_nodes)
        if p0 is None
        else np.asarray(p0, dtype=float)
    )
    mesh = update_coordinates(mesh0, u0) if np.any(u0) else mesh0

    sysi = assemble_initial(mesh, v0, p0, solid, fluid, loads)
    Am, fm = constrain_system(sysi.mass, sysi.f_accel, bc.u_dofs, 0.0)
    accel = spla.spsolve(Am.tocsc(), fm)
    if not np.all(np.isfinite(accel)):
        raise SolverError("initial acceleration solve failed (singular mass matrix?)")
    Dm, gm = constrain_system(
        sysi.compress, sysi.g_const - sysi.coupling @ accel, bc.p_dofs, 0.0
    )
    pdot = spla.spsolve(Dm.tocsc(), gm)
    if not np.all(np.isfinite(pdot)):
        raise SolverError("initial pressure-rate solve failed (singular storage matrix?)")

    ubar = v0 * dt
    return History(
        mesh=mesh,
        u_total=u0,
        p_total=p0,
        ubar=ubar,
        ubar_prev=ubar - accel.reshape(-1, 2) * dt**2,
        pbar=pdot * dt,
        t=0.0,
        k=0,
    )


def step(
    history: History,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    bc: DirichletSet,
    dt: float,
) -> StepResult:
    """Advance one step: predictor solve, mid-step update, corrector solve."""
    mesh_k, p_k = history.mesh, history.p_total
    try:
        sys_p = assemble_predictor(
            mesh_k, p_k, history.ubar, history.pbar, solid, fluid, loads, dt, history.t
        )
        u_pred, p_pred = solve_block(apply_dirichlet(sys_p, bc))

        mesh_mid = update_coordinates(mesh_k, 0.5 * u_pred)
        p_mid = p_k + 0.5 * p_pred
        sys_c = assemble_corrector(
            mesh_mid, p_mid, u_pred, p_pred,
            mesh_k, p_k, history.ubar, history.ubar_prev, history.pbar,
            solid, fluid, loads, dt, history.t,
        )
        u_corr, p_corr = solve_block(apply_dirichlet(sys_c, bc))

        du = 0.5 * (u_pred + u_corr)
        dp = 0.5 * (p_pred + p_corr)
        mesh_new = update_coordinates(mesh_k, du)
    except (SolverError, InvertedElementError) as err:
        raise type(err)(f"step {history.k + 1} (t = {history.t + dt:.6g} s): {err}") from err

    new = History(
        mesh=mesh_new,
        u_total=history.u_total + du,
        p_total=history.p_total + dp,
        ubar=du,
        ubar_prev=history.ubar,
        pbar=dp,
        t=history.t + dt,
        k=history.k + 1,
    )
    return StepResult(new, u_pred, p_pred, u_corr, p_corr)


def run(
    mesh0: Mesh2D,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    bc: DirichletSet,
    schedule: Schedule,
    probe_cell: int = 0,
    u0=None,
    v0=None,
    p0=None,
    snapshot_steps=(),
    probe_names=(),
) -> RunResult:
    """Run the full time loop, recording probe values after every step.

    Records the probe displacements, the element-averaged volume ratio and
    strain energy density at ``probe_cell``, and the global dissipation
    power.  Snapshot states are kept for the requested step indices.
    """
    dt = schedule.dt
    history = initialize(mesh0, u0, v0, p0, solid, fluid, loads, bc, dt)
    n = schedule.n_steps
    probes = np.asarray(schedule.probe_nodes, dtype=np.int64)

    times = np.empty(n)
    probe_u = np.empty((n, probes.size, 2))
    J_hist = np.empty(n)
    W_hist = np.empty(n)
    psi_hist = np.empty(n)
    snapshots = []
    snapset = set(int(s) for s in snapshot_steps)

    for k in range(n):
        result = step(history, solid, fluid, loads, bc, dt)
        history = result.history
        times[k] = history.t
        probe_u[k] = history.u_total[probes]
        J_q, W_q = postproc.deformation_measures(history.mesh, solid, elements=[probe_cell])
        J_hist[k] = J_q.mean()
        W_hist[k] = W_q.mean()
        psi_hist[k] = postproc.dissipation(history.mesh, history.p_total, fluid)
        if history.k in snapset:
            snapshots.append((history.k, history))

    return RunResult(
        times=times,
        probe_u=probe_u,
        J_probe=J_hist,
        W_probe=W_hist,
        psi=psi_hist,
        history=history,
        probe_names=tuple(probe_names),
        snapshots=snapshots,
    )
