"""Linear (infinitesimal-strain) reference solvers and the analytic compression state.

The linear model freezes all coefficients at the initial configuration: the
small-strain Hookean limit of the hyperelastic law, constant porosity,
permeability and densities.  Two time integrators are provided, a backward
finite-difference stepper structurally identical to the incremental scheme
and a Newmark stepper for the displacements combined with a backward
difference of the pressure.  Both factorise their constant system matrix
once.  The analytic uniaxial compression solver supplies the steady-state
oracle for the confined column benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .assembly import (
    DirichletSet,
    LoadCase,
    _mapping_arrays,
    _scatter_matrix,
    _traction_vector,
    _udofs,
    _DN1,
    _DN2,
    _N1,
    _N2,
    VOLUME_RULE,
)
from .materials import FluidParams, SolidParams
from .mesh import Mesh2D

__all__ = [
    "NewmarkParams",
    "LinearBiotSystem",
    "LinearBDState",
    "NewmarkState",
    "assemble_linear_biot",
    "LinearBDStepper",
    "NewmarkStepper",
    "linear_step_bd",
    "linear_step_newmark",
    "analytic_compression",
]


@dataclass(frozen=True)
class NewmarkParams:
    """Newmark parameters; the defaults are the trapezoidal (average acceleration) rule."""

    beta: float = 0.25
    gamma: float = 0.5


@dataclass(frozen=True)
class LinearBiotSystem:
    """Constant matrices of the linearised two-field problem on the initial mesh."""

    mesh: Mesh2D
    Mm: sp.csr_matrix
    A: sp.csr_matrix
    Bup: sp.csr_matrix
    Cpu: sp.csr_matrix
    Kp: sp.csr_matrix
    D: sp.csr_matrix
    N: sp.csr_matrix
    bc: DirichletSet
    rho_bar0: float
    rho_f0: float
    k0: float

    @property
    def n_u(self) -> int:
        return self.Mm.shape[0]

    @property
    def n_p(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class LinearBDState:
    u: np.ndarray
    p: np.ndarray
    ubar: np.ndarray
    t: float


@dataclass(frozen=True)
class NewmarkState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p: np.ndarray
    t: float


def assemble_linear_biot(
    mesh: Mesh2D, solid: SolidParams, fluid: FluidParams, bc: DirichletSet
) -> LinearBiotSystem:
    """Assemble the constant matrices on the initial configuration.

    The elastic block uses the plane-strain Voigt form of Hooke's law with
    the Lame constants of the hyperelastic model; the coupling block pairs
    the pressure with the displacement divergence, so its transpose is the
    divergence-coupling block exactly.
    """
    n_u, n_p = 2 * mesh.n_nodes, mesh.n_pressure_nodes
    ud, pd = _udofs(mesh), mesh.conn_q1
    _, det0, inv0 = _mapping_arrays(mesh.coords0, mesh.conn_q2, _DN2)
    wdet = VOLUME_RULE.weights[None, :] * det0
    gN2 = np.einsum("qnl,eqlk->eqnk", _DN2, inv0)
    gN1 = np.einsum("qnl,eqlk->eqnk", _DN1, inv0)

    lam, mu = solid.lam, solid.mu
    Dv = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    ne, nq = wdet.shape
    Bv = np.zeros((ne, nq, 3, 18))
    Bv[:, :, 0, 0::2] = gN2[..., 0]
    Bv[:, :, 1, 1::2] = gN2[..., 1]
    Bv[:, :, 2, 0::2] = gN2[..., 1]
    Bv[:, :, 2, 1::2] = gN2[..., 0]
    ke = np.einsum("eq,eqra,rs,eqsb->eab", wdet, Bv, Dv, Bv)
    A = _scatter_matrix(ke, ud, ud, (n_u, n_u))

    phi0 = 1.0 - solid.phi_s0
    rho_bar0 = phi0 * fluid.rho_f0 + solid.phi_s0 * solid.rho_s0
    me = np.einsum("eq,qa,qb->eab", rho_bar0 * wdet, _N2, _N2)
    me = np.einsum("eab,ik->eaibk", me, np.eye(2)).reshape(ne, 18, 18)
    Mm = _scatter_matrix(me, ud, ud, (n_u, n_u))

    be = np.einsum("eq,eqai,qp->eaip", wdet, gN2, _N1).reshape(ne, 18, 4)
    Bup = _scatter_matrix(be, ud, pd, (n_u, n_p))
    Cpu = Bup.T.tocsr()

    kp = fluid.k0 * np.einsum("eq,eqpi,eqsi->eps", wdet, gN1, gN1)
    Kp = _scatter_matrix(kp, pd, pd, (n_p, n_p))

    M0 = phi0 / fluid.kappa_f
    de = M0 * np.einsum("eq,qp,qs->eps", wdet, _N1, _N1)
    D = _scatter_matrix(de, pd, pd, (n_p, n_p))

    ncoef = fluid.rho_f0 * fluid.k0
    ne_ = ncoef * np.einsum("eq,eqpk,qb->epbk", wdet, gN1, _N2).reshape(ne, 4, 18)
    N = _scatter_matrix(ne_, pd, ud, (n_p, n_u))

    return LinearBiotSystem(
        mesh=mesh, Mm=Mm, A=A, Bup=Bup, Cpu=Cpu, Kp=Kp, D=D, N=N, bc=bc,
        rho_bar0=rho_bar0, rho_f0=fluid.rho_f0, k0=fluid.k0,
    )


def _external_force(
    system: LinearBiotSystem, loads: LoadCase, t: float, plus: bool = False
) -> np.ndarray:
    f = np.zeros(system.n_u)
    mesh = system.mesh
    for name, tr in loads.tractions.items():
        value = tr.at_plus(t) if plus else tr.at(t)
        f += _traction_vector(mesh, mesh.boundary_regions[name], value, system.n_u)
    g = loads.g_at(t)
    if np.any(g):
        f += system.Mm @ np.tile(g, mesh.n_nodes)
    return f


def _fluid_force(system: LinearBiotSystem, loads: LoadCase, t: float) -> np.ndarray:
    fv = loads.f_at(t)
    if not np.any(fv):
        return np.zeros(system.n_p)
    return system.N @ np.tile(fv, system.mesh.n_nodes)


def _compose(blocks, n_p: int) -> sp.csc_matrix:
    (a, b), (c, d) = blocks
    if n_p == 0:
        return sp.csc_matrix(a)
    return sp.bmat([[a, b], [c, d]], format="csc")


def _constrain_composed(A: sp.spmatrix, u_dofs, p_dofs, n_u: int) -> sp.csc_matrix:
    idx = np.concatenate([np.asarray(u_dofs, dtype=np.int64), n_u + np.asarray(p_dofs, dtype=np.int64)])
    n = A.shape[0]
    free = np.ones(n)
    free[idx] = 0.0
    P = sp.diags(free)
    one = np.zeros(n)
    one[idx] = 1.0
    return (P @ A @ P + sp.diags(one)).tocsc()


class LinearBDStepper:
    """Backward-difference integrator of the linear two-field system.

    Homogeneous Dirichlet increments only; the composed system matrix is
    factorised once and reused for every step.
    """

    def __init__(self, system: LinearBiotSystem, loads: LoadCase, dt: float):
        self.system = system
        self.loads = loads
        self.dt = dt
        A = _compose(
            [
                [system.Mm / dt**2 + system.A, -system.Bup],
                [system.Cpu + system.N / dt, dt * system.Kp + system.D],
            ],
            system.n_p,
        )
        self._lu = spla.splu(_constrain_composed(A, system.bc.u_dofs, system.bc.p_dofs, system.n_u))

    def initial_state(self, u0=None, v0=None, p0=None) -> LinearBDState:
        n_u, n_p = self.system.n_u, self.system.n_p
        u = np.zeros(n_u) if u0 is None else np.asarray(u0, dtype=float)
        p = np.zeros(n_p) if p0 is None else np.asarray(p0, dtype=float)
        v = np.zeros(n_u) if v0 is None else np.asarray(v0, dtype=float)
        return LinearBDState(u=u, p=p, ubar=v * self.dt, t=0.0)

    def step(self, state: LinearBDState) -> LinearBDState:
        s, dt = self.system, self.dt
        t1 = state.t + dt
        f = _external_force(s, self.loads, t1) - s.A @ state.u + s.Bup @ state.p
        f += s.Mm @ state.ubar / dt**2
        g = -dt * (s.Kp @ state.p) + s.N @ state.ubar / dt + dt * _fluid_force(s, self.loads, t1)
        rhs = np.concatenate([f, g]) if s.n_p else f
        rhs[s.bc.u_dofs] = 0.0
        if s.n_p:
            rhs[s.n_u + s.bc.p_dofs] = 0.0
        x = self._lu.solve(rhs)
        du, dp = x[: s.n_u], x[s.n_u :]
        return LinearBDState(u=state.u + du, p=state.p + dp, ubar=du, t=t1)


class NewmarkStepper:
    """Newmark integrator for the displacements with backward-difference pressure rate."""

    def __init__(
        self,
        system: LinearBiotSystem,
        loads: LoadCase,
        dt: float,
        params: NewmarkParams = NewmarkParams(),
    ):
        self.system = system
        self.loads = loads
        self.dt = dt
        self.params = params
        beta, gamma = params.beta, params.gamma
        A = _compose(
            [
                [system.Mm + beta * dt**2 * system.A, -system.Bup],
                [system.N + gamma * dt * system.Cpu, system.Kp + system.D / dt],
            ],
            system.n_p,
        )
        self._lu = spla.splu(_constrain_composed(A, system.bc.u_dofs, system.bc.p_dofs, system.n_u))

    def initial_state(self, u0=None, v0=None, p0=None) -> NewmarkState:
        """Initial acceleration from the balance at t = 0+.

        The load enters with its right limit at t = 0, so sudden loads
        accelerate the medium from the start.  The startup solve uses the
        row-sum lumped mass: a consistent-mass inverse of a jump load would
        seed the unresolved high modes, which the trapezoidal rule never
        damps.
        """
        s = self.system
        u = np.zeros(s.n_u) if u0 is None else np.asarray(u0, dtype=float)
        v = np.zeros(s.n_u) if v0 is None else np.asarray(v0, dtype=float)
        p = np.zeros(s.n_p) if p0 is None else np.asarray(p0, dtype=float)
        rhs = _external_force(s, self.loads, 0.0, plus=True) - s.A @ u + s.Bup @ p
        lumped = np.asarray(s.Mm.sum(axis=1)).ravel()
        a = rhs / lumped
        a[s.bc.u_dofs] = 0.0
        return NewmarkState(u=u, v=v, a=a, p=p, t=0.0)

    def step(self, state: NewmarkState) -> NewmarkState:
        s, dt = self.system, self.dt
        beta, gamma = self.params.beta, self.params.gamma
        t1 = state.t + dt
        ut = state.u + dt * state.v + dt**2 * (0.5 - beta) * state.a
        vt = state.v + dt * (1.0 - gamma) * state.a
        f = _external_force(s, self.loads, t1) - s.A @ ut
        g = _fluid_force(s, self.loads, t1) + s.D @ state.p / dt - s.Cpu @ vt
        rhs = np.concatenate([f, g]) if s.n_p else f
        rhs[s.bc.u_dofs] = 0.0
        if s.n_p:
            rhs[s.n_u + s.bc.p_dofs] = 0.0
        x = self._lu.solve(rhs)
        a1, p1 = x[: s.n_u], x[s.n_u :]
        return NewmarkState(
            u=ut + beta * dt**2 * a1,
            v=vt + gamma * dt * a1,
            a=a1,
            p=p1,
            t=t1,
        )


def linear_step_bd(system: LinearBiotSystem, state: LinearBDState, loads: LoadCase, dt: float):
    """One backward-difference step (one-shot convenience around the stepper)."""
    return LinearBDStepper(system, loads, dt).step(state)


def linear_step_newmark(
    system: LinearBiotSystem,
    state: NewmarkState,
    loads: LoadCase,
    dt: float,
    params: NewmarkParams = NewmarkParams(),
):
    """One Newmark step (one-shot convenience around the stepper)."""
    return NewmarkStepper(system, loads, dt, params).step(state)


def analytic_compression(lam: float, mu: float, hbar: float) -> float:
    """Vertical strain of the confined uniaxial steady compression state.

    Solves (1 + e) mu + (lam ln(1 + e) - mu) / (1 + e) + hbar = 0 for the
    unique root on the physical branch e in (-1, inf); the top displacement
    of a column of height H is then e * H.
    """
    if lam <= 0.0 or mu <= 0.0:
        raise ValueError("lam and mu must be positive")

    def residual(e):
        s = 1.0 + e
        return s * mu + (lam * np.log(s) - mu) / s + hbar

    lo, hi = -0.99, 10.0
    flo, fhi = residual(lo), residual(hi)
    if flo == 0.0:
        root = lo
    elif fhi == 0.0:
        root = hi
    elif flo * fhi > 0.0:
        raise ValueError(
            f"no sign change of the compression residual on ({lo}, {hi}); "
            f"residual({lo}) = {flo:.3e}, residual({hi}) = {fhi:.3e}"
        )
    else:
        root = brentq(residual, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    scale = max(abs(hbar), lam + 2.0 * mu)
    if abs(residual(root)) > 1e-12 * scale:
        raise ValueError(f"compression root did not converge: residual {residual(root):.3e}")
    return float(root)
