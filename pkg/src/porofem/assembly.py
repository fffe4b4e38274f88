"""Element and global assembly of the incremental two-field block systems.

Each implicit step solves, on the latest configuration, a linear block system

    [Muu / dt^2 + Auu] du -  Bup dp            = f
    [Npu / dt   + Cpu] du + [dt Kpp + Dpp] dp  = g

for the displacement and pressure increments.  The predictor assembles it on
the configuration at t_k with the previous increment as convection field; the
corrector reassembles on the mid-step configuration, driven by the
out-of-balance residuals of the t_k state.  Element contributions are
evaluated for all elements at once (vectorised quadrature batches); the
global scatter is a plain COO reduction with a fixed summation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import materials as mat
from .materials import FluidParams, SolidParams
from .mesh import (
    EDGE_Q2_NODES,
    InvertedElementError,
    Mesh2D,
    _lagrange_quadratic,
    _mapping_arrays,
    gauss_rule_1d,
    gauss_rule_2d,
    q1_shape,
    q2_shape,
)

__all__ = [
    "BlockSystem",
    "DirichletSet",
    "Traction",
    "step_traction",
    "LoadCase",
    "InitialSystems",
    "assemble_predictor",
    "assemble_corrector",
    "residual_solid",
    "residual_fluid",
    "assemble_initial",
    "apply_dirichlet",
    "darcy_configuration_derivative",
    "constrain_system",
]

VOLUME_RULE = gauss_rule_2d(3)
EDGE_RULE = gauss_rule_1d(3)

_N2, _DN2 = q2_shape(VOLUME_RULE.points)  # (nq, 9), (nq, 9, 2)
_N1, _DN1 = q1_shape(VOLUME_RULE.points)  # (nq, 4), (nq, 4, 2)
_EYE2 = np.eye(2)


@dataclass(frozen=True)
class BlockSystem:
    """Sparse blocks and right-hand sides of one incremental solve."""

    Muu: sp.csr_matrix
    Auu: sp.csr_matrix
    Bup: sp.csr_matrix
    Cpu: sp.csr_matrix
    Npu: sp.csr_matrix
    Kpp: sp.csr_matrix
    Dpp: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    dt: float

    @property
    def n_u(self) -> int:
        return self.f.shape[0]

    @property
    def n_p(self) -> int:
        return self.g.shape[0]

    def matrix(self) -> sp.csr_matrix:
        """Monolithic system matrix."""
        dt = self.dt
        return sp.bmat(
            [
                [self.Muu / dt**2 + self.Auu, -self.Bup],
                [self.Npu / dt + self.Cpu, dt * self.Kpp + self.Dpp],
            ],
            format="csr",
        )

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, self.g])


@dataclass(frozen=True)
class DirichletSet:
    """Constrained displacement DOFs and pressure nodes with prescribed increments."""

    u_dofs: np.ndarray
    u_values: np.ndarray
    p_dofs: np.ndarray
    p_values: np.ndarray

    @classmethod
    def build(cls, displacement=(), pressure=()) -> "DirichletSet":
        """Assemble from (nodes, component, value) and (nodes, value) groups."""
        u_dofs, u_vals = [], []
        for nodes, comp, value in displacement:
            nodes = np.asarray(nodes, dtype=np.int64)
            u_dofs.append(2 * nodes + comp)
            u_vals.append(np.full(nodes.shape, float(value)))
        p_dofs, p_vals = [], []
        for nodes, value in pressure:
            nodes = np.asarray(nodes, dtype=np.int64)
            p_dofs.append(nodes)
            p_vals.append(np.full(nodes.shape, float(value)))
        ud = np.concatenate(u_dofs) if u_dofs else np.empty(0, dtype=np.int64)
        uv = np.concatenate(u_vals) if u_vals else np.empty(0)
        pd = np.concatenate(p_dofs) if p_dofs else np.empty(0, dtype=np.int64)
        pv = np.concatenate(p_vals) if p_vals else np.empty(0)
        ud, uv = _dedupe_constraints(ud, uv, "displacement")
        pd, pv = _dedupe_constraints(pd, pv, "pressure")
        return cls(u_dofs=ud, u_values=uv, p_dofs=pd, p_values=pv)


def _dedupe_constraints(idx, vals, kind):
    if idx.size == 0:
        return idx, vals
    order = np.argsort(idx, kind="stable")
    idx, vals = idx[order], vals[order]
    uniq, first = np.unique(idx, return_index=True)
    for lo, hi in zip(first, np.append(first[1:], idx.size)):
        if not np.allclose(vals[lo:hi], vals[lo]):
            raise ValueError(
                f"conflicting {kind} constraints on dof {idx[lo]}: {set(vals[lo:hi])}"
            )
    return uniq, vals[first]


@dataclass(frozen=True)
class Traction:
    """Boundary traction on one region: value (constant or callable of t) and curvature."""

    value: np.ndarray | Callable
    curvature: float = 0.0

    def at(self, t: float) -> np.ndarray:
        if callable(self.value):
            return np.asarray(self.value(t), dtype=float)
        return np.asarray(self.value, dtype=float)

    def at_plus(self, t: float) -> np.ndarray:
        """Right limit of the schedule, for rate initialisations at jumps."""
        return self.at(t + 1e-12)


def step_traction(vector) -> Callable:
    """Schedule that switches on right after t = 0 (zero at t = 0 itself).

    Realises a sudden load within the first increment: the full magnitude
    appears as the first load increment while initial-rate solves still see
    the unloaded state.
    """
    vector = np.asarray(vector, dtype=float)
    off = np.zeros_like(vector)
    return lambda t: vector if t > 0.0 else off


@dataclass(frozen=True)
class LoadCase:
    """Boundary tractions per region plus mixture and fluid body forces."""

    tractions: dict = field(default_factory=dict)
    body_force: np.ndarray = field(default_factory=lambda: np.zeros(2))
    fluid_force: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def g_at(self, t: float) -> np.ndarray:
        return np.asarray(self.body_force, dtype=float)

    def f_at(self, t: float) -> np.ndarray:
        return np.asarray(self.fluid_force, dtype=float)


@dataclass(frozen=True)
class InitialSystems:
    """Matrices and vectors of the start-up solves for the initial rates.

    The acceleration solves ``mass @ a = f_accel``; the pressure rate then
    solves ``compress @ pdot = g_const - coupling @ a``.
    """

    mass: sp.csr_matrix
    f_accel: np.ndarray
    compress: sp.csr_matrix
    g_const: np.ndarray
    coupling: sp.csr_matrix


# ---------------------------------------------------------------------------
# quadrature-point state
# ---------------------------------------------------------------------------


class _QPState:
    """Per-(element, quadrature point) fields on one configuration."""

    __slots__ = (
        "wdet", "gN2", "gN1", "F", "J", "sigma_eff", "sigma_tot", "p", "grad_p",
        "phi", "rho_f", "rho_bar", "M", "K", "gus", "divus", "ps",
        "dM", "dK", "Bt", "Kt", "Khat", "Mt", "Rt", "A_tilde",
    )


def _eval_state(
    mesh: Mesh2D,
    p_nodal,
    solid: SolidParams,
    fluid: FluidParams,
    ustar=None,
    pstar=None,
    tangent: bool = True,
) -> _QPState:
    p_nodal = np.asarray(p_nodal, dtype=float)
    jac_c, det_c, inv_c = _mapping_arrays(mesh.coords, mesh.conn_q2, _DN2)
    jac_0, det_0, inv_0 = _mapping_arrays(mesh.coords0, mesh.conn_q2, _DN2)
    if np.any(det_c <= 0.0):
        bad = int(np.argwhere(np.any(det_c <= 0.0, axis=1))[0, 0])
        raise InvertedElementError(f"element {bad} is inverted in the current configuration")

    st = _QPState()
    st.wdet = VOLUME_RULE.weights[None, :] * det_c
    st.gN2 = np.einsum("qnl,eqlk->eqnk", _DN2, inv_c)
    st.gN1 = np.einsum("qnl,eqlk->eqnk", _DN1, inv_c)
    st.F = np.einsum("eqkl,eqlm->eqkm", jac_c, inv_0)
    st.J = det_c / det_0

    pe = p_nodal[mesh.conn_q1]
    st.p = np.einsum("qn,en->eq", _N1, pe)
    st.grad_p = np.einsum("en,eqnk->eqk", pe, st.gN1)

    st.sigma_eff = mat.effective_stress(st.F, solid.lam, solid.mu)
    st.sigma_tot = st.sigma_eff - st.p[..., None, None] * _EYE2
    st.rho_f = mat.fluid_density(st.p, fluid)
    _, st.phi, st.rho_bar = mat.porosity_and_density(st.J, st.p, solid, fluid)
    st.M, _, st.K = mat.biot_coefficients(st.J, st.phi, fluid, dim=2)

    if ustar is not None:
        ue = np.asarray(ustar, dtype=float)[mesh.conn_q2]
        st.gus = np.einsum("eni,eqnk->eqik", ue, st.gN2)
        st.divus = np.trace(st.gus, axis1=-2, axis2=-1)
        st.ps = np.einsum("qn,en->eq", _N1, np.asarray(pstar, dtype=float)[mesh.conn_q1])
        st.dM, st.dK, _ = mat.coefficient_variations(st.J, st.divus, solid, fluid, dim=2)
        B = np.broadcast_to(_EYE2, st.gus.shape)
        st.Bt = mat.convected_coupling(B, st.gus)
        st.Kt = mat.convected_permeability(st.K, st.gus)
        st.Khat = mat.dynamic_permeability(st.K, st.gus, st.ps, fluid.kappa_f)
        st.Mt = mat.convected_compressibility(st.M, st.gus)
        st.Rt = mat.density_perturbation(
            st.phi, st.rho_f, solid.rho_s0, st.gus, st.ps, fluid.kappa_f
        )
    else:
        shape = st.J.shape
        st.gus = np.zeros(shape + (2, 2))
        st.divus = np.zeros(shape)
        st.ps = np.zeros(shape)
        st.dM = np.zeros(shape)
        st.dK = np.zeros(shape + (2, 2))
        st.Bt = np.zeros(shape + (2, 2))
        st.Kt = np.zeros(shape + (2, 2))
        st.Khat = np.zeros(shape + (2, 2))
        st.Mt = np.zeros(shape)
        st.Rt = np.zeros(shape)

    if tangent:
        D_eff = mat.tangent_stiffness(st.F, solid.lam, solid.mu)
        st.A_tilde = mat.geometric_tangent(D_eff, st.sigma_eff, st.p, _EYE2)
    else:
        st.A_tilde = None
    return st


def _interp_q2(mesh, nodal, which=_N2):
    """Interpolate a Q2 vector field at the volume quadrature points, (ne, nq, 2)."""
    return np.einsum("qn,eni->eqi", which, np.asarray(nodal, dtype=float)[mesh.conn_q2])


def _interp_q1(mesh, nodal):
    return np.einsum("qn,en->eq", _N1, np.asarray(nodal, dtype=float)[mesh.conn_q1])


# ---------------------------------------------------------------------------
# scatter helpers
# ---------------------------------------------------------------------------


def _udofs(mesh: Mesh2D) -> np.ndarray:
    conn = mesh.conn_q2
    return (2 * conn[:, :, None] + np.arange(2)).reshape(conn.shape[0], 18)


def _scatter_matrix(vals, rows, cols, shape) -> sp.csr_matrix:
    ne, a, b = vals.shape
    r = np.repeat(rows[:, :, None], b, axis=2)
    c = np.repeat(cols[:, None, :], a, axis=1)
    return sp.coo_matrix((vals.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()


def _scatter_vector(vals, rows, n) -> np.ndarray:
    return np.bincount(rows.ravel(), weights=vals.ravel(), minlength=n)


# ---------------------------------------------------------------------------
# block and vector integrands
# ---------------------------------------------------------------------------


def _blocks(mesh: Mesh2D, st: _QPState, fluid: FluidParams):
    """All seven system blocks from a quadrature state."""
    n_u, n_p = 2 * mesh.n_nodes, mesh.n_pressure_nodes
    ud, pd = _udofs(mesh), mesh.conn_q1

    ke = np.einsum("eq,eqijkl,eqaj,eqbl->eaibk", st.wdet, st.A_tilde, st.gN2, st.gN2)
    Auu = _scatter_matrix(ke.reshape(-1, 18, 18), ud, ud, (n_u, n_u))

    me = np.einsum("eq,qa,qb->eab", st.wdet * (st.rho_bar + st.Rt), _N2, _N2)
    me = np.einsum("eab,ik->eaibk", me, _EYE2)
    Muu = _scatter_matrix(me.reshape(-1, 18, 18), ud, ud, (n_u, n_u))

    be = np.einsum("eq,eqai,qp->eaip", st.wdet, st.gN2, _N1)
    Bup = _scatter_matrix(be.reshape(-1, 18, 4), ud, pd, (n_u, n_p))

    BBt = _EYE2 + st.Bt
    ce = np.einsum("eq,qp,eqkl,eqbl->epbk", st.wdet, _N1, BBt, st.gN2)
    Cpu = _scatter_matrix(ce.reshape(-1, 4, 18), pd, ud, (n_p, n_u))

    kp = np.einsum("eq,eqpi,eqij,eqsj->eps", st.wdet, st.gN1, st.K, st.gN1)
    Kpp = _scatter_matrix(kp, pd, pd, (n_p, n_p))

    de = np.einsum("eq,qp,qs->eps", st.wdet * (st.M + st.Mt + st.dM), _N1, _N1)
    Dpp = _scatter_matrix(de, pd, pd, (n_p, n_p))

    KKh = st.K + st.Khat + st.dK
    ne_ = np.einsum("eq,eqpi,eqik,qb->epbk", st.wdet * st.rho_f, st.gN1, KKh, _N2)
    Npu = _scatter_matrix(ne_.reshape(-1, 4, 18), pd, ud, (n_p, n_u))

    return Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp


def _traction_vector(mesh: Mesh2D, edges, h, n_u, hk=None, curvature=0.0, ustar=None):
    """Integrate (h + (n . u*) H h^k) . v over current-configuration edges."""
    vec = np.zeros(n_u)
    svals, sders = _lagrange_quadratic(EDGE_RULE.points[:, 0])
    wq = EDGE_RULE.weights
    h = np.asarray(h, dtype=float)
    for elem, ledge in edges:
        nodes = mesh.conn_q2[elem, EDGE_Q2_NODES[ledge]]
        xy = mesh.coords[nodes]
        tang = np.einsum("qa,ak->qk", sders, xy)
        ds = np.linalg.norm(tang, axis=1)
        hq = np.broadcast_to(h, (len(wq), 2)).copy()
        if curvature != 0.0 and ustar is not None and hk is not None:
            normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / ds[:, None]
            uq = svals @ np.asarray(ustar, dtype=float)[nodes]
            hq = hq + (curvature * np.einsum("qk,qk->q", normal, uq))[:, None] * np.asarray(hk)
        fe = np.einsum("q,qa,qi->ai", wq * ds, svals, hq)
        np.add.at(vec, 2 * nodes[:, None] + np.arange(2), fe)
    return vec


def _region_edges(mesh: Mesh2D, name: str):
    try:
        return mesh.boundary_regions[name]
    except KeyError:
        raise KeyError(f"mesh has no boundary region {name!r}") from None


# ---------------------------------------------------------------------------
# assembly entry points
# ---------------------------------------------------------------------------


def assemble_predictor(
    mesh: Mesh2D,
    p,
    ubar,
    pbar,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    dt: float,
    t: float,
) -> BlockSystem:
    """Incremental system linearised at the configuration of time t = t_k.

    The convection field is the previous displacement increment ``ubar`` with
    matching pressure increment ``pbar``; the right-hand side carries the
    out-of-balance stress of the current state and the loads at t_{k+1}.
    """
    st = _eval_state(mesh, p, solid, fluid, ustar=ubar, pstar=pbar)
    n_u, n_p = 2 * mesh.n_nodes, mesh.n_pressure_nodes
    Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp = _blocks(mesh, st, fluid)

    ubar_q = _interp_q2(mesh, ubar)
    g1 = loads.g_at(t + dt)
    fk = loads.f_at(t)
    mass_coef = st.rho_bar + st.Rt
    fe = np.einsum("eq,eqi,qa->eai", st.wdet, mass_coef[..., None] * (ubar_q / dt**2 + g1), _N2)
    fe -= np.einsum("eq,eqij,eqaj->eai", st.wdet, st.sigma_tot, st.gN2)
    f = _scatter_vector(fe.reshape(-1, 18), _udofs(mesh), n_u)
    for name, tr in loads.tractions.items():
        f += _traction_vector(
            mesh,
            _region_edges(mesh, name),
            tr.at(t + dt),
            n_u,
            hk=tr.at(t),
            curvature=tr.curvature,
            ustar=ubar,
        )

    KKt = st.K + st.Kt + st.dK
    KKh = st.K + st.Khat + st.dK
    flux = -dt * np.einsum("eqij,eqj->eqi", KKt, st.grad_p)
    flux += dt * st.rho_f[..., None] * np.einsum("eqij,eqj->eqi", KKh, fk + ubar_q / dt**2)
    ge = np.einsum("eq,eqpi,eqi->ep", st.wdet, st.gN1, flux)
    g = _scatter_vector(ge, mesh.conn_q1, n_p)

    return BlockSystem(Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp, f, g, dt)


def assemble_corrector(
    mesh_mid: Mesh2D,
    p_mid,
    u_pred,
    p_pred,
    mesh_old: Mesh2D,
    p_old,
    ubar,
    ubar_prev,
    pbar,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    dt: float,
    t: float,
) -> BlockSystem:
    """Secant incremental system on the mid-step configuration.

    ``mesh_mid``/``p_mid`` hold the state advanced by half the predictor
    increment; the convection field is the full predictor increment.  The
    right-hand side subtracts the residuals of the t_k state evaluated on the
    old configuration, with the acceleration estimated from the predictor.
    """
    st = _eval_state(mesh_mid, p_mid, solid, fluid, ustar=u_pred, pstar=p_pred)
    n_u, n_p = 2 * mesh_mid.n_nodes, mesh_mid.n_pressure_nodes
    Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp = _blocks(mesh_mid, st, fluid)

    gk, g1 = loads.g_at(t), loads.g_at(t + dt)
    fk, f1 = loads.f_at(t), loads.f_at(t + dt)
    gbar, dg = 0.5 * (gk + g1), g1 - gk
    fbar, df = 0.5 * (fk + f1), f1 - fk

    ubar_q = _interp_q2(mesh_mid, ubar)
    ubar_prev_q = _interp_q2(mesh_mid, ubar_prev)
    accel = (np.asarray(u_pred, dtype=float) - np.asarray(ubar, dtype=float)) / dt**2

    fe = np.einsum(
        "eq,eqi,qa->eai",
        st.wdet,
        st.Rt[..., None] * (gbar + ubar_q / dt**2)
        + st.rho_bar[..., None] * (dg + (2.0 * ubar_q - ubar_prev_q) / dt**2),
        _N2,
    )
    f = _scatter_vector(fe.reshape(-1, 18), _udofs(mesh_mid), n_u)
    for name, tr in loads.tractions.items():
        hbar = 0.5 * (tr.at(t) + tr.at(t + dt))
        f += _traction_vector(
            mesh_mid,
            _region_edges(mesh_mid, name),
            tr.at(t + dt) - tr.at(t),
            n_u,
            hk=hbar,
            curvature=tr.curvature,
            ustar=u_pred,
        )
    f -= residual_solid(mesh_old, p_old, accel, solid, fluid, loads, t)

    # pressure row: rate terms of the t_k state plus configuration sensitivities
    div_ubar = np.trace(
        np.einsum("eni,eqnk->eqik", np.asarray(ubar, dtype=float)[mesh_mid.conn_q2], st.gN2),
        axis1=-2,
        axis2=-1,
    )
    pbar_q = _interp_q1(mesh_mid, pbar)
    ge = np.einsum("eq,qp,eq->ep", st.wdet, _N1, div_ubar + st.M * pbar_q)
    rA = fbar + ubar_q / dt**2
    rB = df + (2.0 * ubar_q - ubar_prev_q) / dt**2
    KtdK = st.Kt + st.dK
    KhdK = st.Khat + st.dK
    flux = -dt * np.einsum("eqij,eqj->eqi", KtdK, st.grad_p)
    flux += dt * st.rho_f[..., None] * (
        np.einsum("eqij,eqj->eqi", KhdK, rA) + np.einsum("eqij,eqj->eqi", st.K, rB)
    )
    ge += np.einsum("eq,eqpi,eqi->ep", st.wdet, st.gN1, flux)
    g = _scatter_vector(ge, mesh_mid.conn_q1, n_p)
    g -= residual_fluid(mesh_old, p_old, ubar, pbar, accel, solid, fluid, loads, dt, t)

    return BlockSystem(Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp, f, g, dt)


def residual_solid(
    mesh: Mesh2D, p, accel, solid: SolidParams, fluid: FluidParams, loads: LoadCase, t: float
) -> np.ndarray:
    """Out-of-balance force functional of a configuration, per displacement DOF.

    Integrates sigma : grad v - rho_bar (g - a) . v over the current
    configuration and subtracts the boundary traction work at time t;
    vanishes on equilibrated states with consistent loads.
    """
    st = _eval_state(mesh, p, solid, fluid, tangent=False)
    n_u = 2 * mesh.n_nodes
    acc_q = _interp_q2(mesh, accel)
    gk = loads.g_at(t)
    fe = np.einsum("eq,eqij,eqaj->eai", st.wdet, st.sigma_tot, st.gN2)
    fe -= np.einsum("eq,eqi,qa->eai", st.wdet, st.rho_bar[..., None] * (gk - acc_q), _N2)
    vec = _scatter_vector(fe.reshape(-1, 18), _udofs(mesh), n_u)
    for name, tr in loads.tractions.items():
        vec -= _traction_vector(mesh, _region_edges(mesh, name), tr.at(t), n_u)
    return vec


def residual_fluid(
    mesh: Mesh2D,
    p,
    ubar,
    pbar,
    accel,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
    dt: float,
    t: float,
) -> np.ndarray:
    """Out-of-balance fluid-content functional, per pressure DOF.

    Integrates q div(ubar) + dt grad q . K (grad p - rho_f (f - a)) + q M pbar
    over the current configuration.
    """
    st = _eval_state(mesh, p, solid, fluid, tangent=False)
    n_p = mesh.n_pressure_nodes
    acc_q = _interp_q2(mesh, accel)
    fk = loads.f_at(t)
    div_ubar = np.trace(
        np.einsum("eni,eqnk->eqik", np.asarray(ubar, dtype=float)[mesh.conn_q2], st.gN2),
        axis1=-2,
        axis2=-1,
    )
    pbar_q = _interp_q1(mesh, pbar)
    ge = np.einsum("eq,qp,eq->ep", st.wdet, _N1, div_ubar + st.M * pbar_q)
    darcy = st.grad_p - st.rho_f[..., None] * (fk - acc_q)
    ge += dt * np.einsum("eq,eqpi,eqij,eqj->ep", st.wdet, st.gN1, st.K, darcy)
    return _scatter_vector(ge, mesh.conn_q1, n_p)


def assemble_initial(
    mesh: Mesh2D,
    v0,
    p0,
    solid: SolidParams,
    fluid: FluidParams,
    loads: LoadCase,
) -> InitialSystems:
    """Start-up systems for the initial acceleration and pressure rate.

    The acceleration balances the loads at t = 0+ against the stress of the
    initial state; the pressure rate then balances storage against the Darcy
    flux and the dilation rate of the initial velocity.
    """
    st = _eval_state(mesh, p0, solid, fluid, tangent=False)
    n_u, n_p = 2 * mesh.n_nodes, mesh.n_pressure_nodes
    ud, pd = _udofs(mesh), mesh.conn_q1

    me = np.einsum("eq,qa,qb->eab", st.wdet * st.rho_bar, _N2, _N2)
    me = np.einsum("eab,ik->eaibk", me, _EYE2)
    mass = _scatter_matrix(me.reshape(-1, 18, 18), ud, ud, (n_u, n_u))

    g0 = loads.g_at(0.0)
    fe = np.einsum("eq,eqi,qa->eai", st.wdet, st.rho_bar[..., None] * g0, _N2)
    fe -= np.einsum("eq,eqij,eqaj->eai", st.wdet, st.sigma_tot, st.gN2)
    f_accel = _scatter_vector(fe.reshape(-1, 18), ud, n_u)
    for name, tr in loads.tractions.items():
        f_accel += _traction_vector(mesh, _region_edges(mesh, name), tr.at(0.0), n_u)

    if np.max(st.M) <= 0.0:
        raise ValueError("compressibility matrix is singular: storage coefficient M vanishes")
    de = np.einsum("eq,qp,qs->eps", st.wdet * st.M, _N1, _N1)
    compress = _scatter_matrix(de, pd, pd, (n_p, n_p))

    f0 = loads.f_at(0.0)
    div_v0 = np.trace(
        np.einsum("eni,eqnk->eqik", np.asarray(v0, dtype=float)[mesh.conn_q2], st.gN2),
        axis1=-2,
        axis2=-1,
    )
    flux0 = np.einsum("eqij,eqj->eqi", st.K, st.grad_p - st.rho_f[..., None] * f0)
    ge = -np.einsum("eq,eqpi,eqi->ep", st.wdet, st.gN1, flux0)
    ge -= np.einsum("eq,qp,eq->ep", st.wdet, _N1, div_v0)
    g_const = _scatter_vector(ge, pd, n_p)

    ne_ = np.einsum("eq,eqpi,eqik,qb->epbk", st.wdet * st.rho_f, st.gN1, st.K, _N2)
    coupling = _scatter_matrix(ne_.reshape(-1, 4, 18), pd, ud, (n_p, n_u))

    return InitialSystems(mass, f_accel, compress, g_const, coupling)


def darcy_configuration_derivative(
    mesh: Mesh2D, p, v, solid: SolidParams, fluid: FluidParams
) -> np.ndarray:
    """Directional derivative of the Darcy stiffness functional under convection v.

    Returns the per-pressure-DOF vector of (K~(v) + dK(v)) grad p . grad q,
    the rate of grad q . K grad p when the configuration convects with v and
    the permeability follows the volume change.
    """
    st = _eval_state(mesh, p, solid, fluid, ustar=v, pstar=np.zeros(mesh.n_pressure_nodes),
                     tangent=False)
    flux = np.einsum("eqij,eqj->eqi", st.Kt + st.dK, st.grad_p)
    ge = np.einsum("eq,eqpi,eqi->ep", st.wdet, st.gN1, flux)
    return _scatter_vector(ge, mesh.conn_q1, mesh.n_pressure_nodes)


# ---------------------------------------------------------------------------
# Dirichlet constraints
# ---------------------------------------------------------------------------


def _projector(n, constrained):
    free = np.ones(n)
    free[constrained] = 0.0
    return sp.diags(free, format="csr")


def _unit_diag(n, constrained):
    d = np.zeros(n)
    d[constrained] = 1.0
    return sp.diags(d, format="csr")


def apply_dirichlet(system: BlockSystem, bc: DirichletSet) -> BlockSystem:
    """Eliminate constrained rows and columns symmetrically.

    Constrained DOFs end up carrying their prescribed increments exactly: the
    corresponding composed row reduces to the identity with the value on the
    right-hand side, and their columns move to the right-hand side.
    """
    ui, uv = _dedupe_constraints(bc.u_dofs, bc.u_values, "displacement")
    pi, pv = _dedupe_constraints(bc.p_dofs, bc.p_values, "pressure")
    n_u, n_p = system.n_u, system.n_p
    if ui.size and (ui.min() < 0 or ui.max() >= n_u):
        raise ValueError("displacement constraint index out of range")
    if pi.size and (pi.min() < 0 or pi.max() >= n_p):
        raise ValueError("pressure constraint index out of range")
    dt = system.dt

    f = system.f.copy()
    g = system.g.copy()
    if ui.size:
        f -= (system.Auu[:, ui] + system.Muu[:, ui] / dt**2) @ uv
        g -= (system.Cpu[:, ui] + system.Npu[:, ui] / dt) @ uv
    if pi.size:
        f += system.Bup[:, pi] @ pv
        g -= (dt * system.Kpp[:, pi] + system.Dpp[:, pi]) @ pv

    Pu = _projector(n_u, ui)
    Pp = _projector(n_p, pi)
    Muu = Pu @ system.Muu @ Pu
    Auu = Pu @ system.Auu @ Pu + _unit_diag(n_u, ui)
    Bup = Pu @ system.Bup @ Pp
    Cpu = Pp @ system.Cpu @ Pu
    Npu = Pp @ system.Npu @ Pu
    Kpp = Pp @ system.Kpp @ Pp
    Dpp = Pp @ system.Dpp @ Pp + _unit_diag(n_p, pi)
    f[ui] = uv
    g[pi] = pv
    return BlockSystem(Muu, Auu, Bup, Cpu, Npu, Kpp, Dpp, f, g, dt)


def constrain_system(A: sp.spmatrix, b: np.ndarray, idx, values=0.0):
    """Symmetric elimination for a plain (single-field) sparse system."""
    idx = np.asarray(idx, dtype=np.int64)
    n = b.shape[0]
    values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
    b = b - A.tocsc()[:, idx] @ values
    P = _projector(n, idx)
    A = P @ A.tocsr() @ P + _unit_diag(n, idx)
    b[idx] = values
    return A.tocsr(), b
