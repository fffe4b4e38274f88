"""Pointwise material laws for the fluid-saturated hyperelastic skeleton.

The effective (skeleton) stress is a compressible neo-Hookean law; the pore
fluid is barotropic with constant bulk modulus; porosity follows the volume
change of an incompressible solid phase, and the permeability grows
exponentially with dilation.  Everything here is pure and broadcasts over
leading batch axes, so the same functions serve single-point unit tests and
whole-mesh quadrature batches.

Plane strain is assumed throughout: 2x2 deformation gradients are the
in-plane block of a 3x3 gradient with unit out-of-plane stretch, and their
2x2 determinant equals the full volume ratio J.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NonPhysicalStateError",
    "SolidParams",
    "FluidParams",
    "MaterialPoint",
    "CoefficientSet",
    "effective_stress",
    "strain_energy_density",
    "tangent_stiffness",
    "fluid_density",
    "porosity_and_density",
    "biot_coefficients",
    "coefficient_variations",
    "convected_coupling",
    "convected_permeability",
    "dynamic_permeability",
    "convected_compressibility",
    "density_perturbation",
    "geometric_tangent",
    "material_point",
    "modified_tensors",
]


class NonPhysicalStateError(ValueError):
    """State outside the validity of the constitutive laws (J <= 0, porosity <= 0, ...)."""


@dataclass(frozen=True)
class SolidParams:
    """Skeleton parameters: Lame constants, grain density and solid fraction."""

    lam: float
    mu: float
    rho_s0: float
    phi_s0: float

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.mu <= 0.0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.rho_s0 < 0.0:
            raise ValueError(f"rho_s0 must be >= 0, got {self.rho_s0}")
        if not 0.0 < self.phi_s0 < 1.0:
            raise ValueError(f"phi_s0 must lie in (0, 1), got {self.phi_s0}")


@dataclass(frozen=True)
class FluidParams:
    """Pore fluid parameters and the permeability law constants.

    ``k0`` is the isotropic reference permeability (m^2 / (Pa s)); ``varkappa``
    the dimensionless exponent of its dependence on dilation.
    """

    rho_f0: float
    kappa_f: float
    p0: float = 0.0
    k0: float = 1.0e-5
    varkappa: float = 0.8

    def __post_init__(self):
        if self.rho_f0 < 0.0:
            raise ValueError(f"rho_f0 must be >= 0, got {self.rho_f0}")
        if self.kappa_f <= 0.0:
            raise ValueError(f"kappa_f must be > 0, got {self.kappa_f}")
        if self.k0 <= 0.0:
            raise ValueError(f"k0 must be > 0, got {self.k0}")
        if self.varkappa <= 0.0:
            raise ValueError(f"varkappa must be > 0, got {self.varkappa}")


@dataclass(frozen=True)
class MaterialPoint:
    """Kinematic and constitutive state at one (or a batch of) material point(s)."""

    F: np.ndarray
    J: np.ndarray
    b: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    rho_f: np.ndarray
    rho_bar: np.ndarray
    sigma_eff: np.ndarray


@dataclass(frozen=True)
class CoefficientSet:
    """Storage coefficients, their configuration variations and the modified tensors."""

    M: np.ndarray
    B: np.ndarray
    K: np.ndarray
    dM: np.ndarray
    dB: np.ndarray
    dK: np.ndarray
    A_tilde: np.ndarray | None = None
    B_tilde: np.ndarray | None = None
    K_tilde: np.ndarray | None = None
    K_hat: np.ndarray | None = None
    M_tilde: np.ndarray | None = None
    R_tilde: np.ndarray | None = None


def _det(F):
    F = np.asarray(F, dtype=float)
    if F.shape[-1] == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return np.linalg.det(F)


def _check_positive_J(J):
    if np.any(J <= 0.0):
        raise NonPhysicalStateError(f"det F must be > 0, min value {np.min(J):.3e}")


def effective_stress(F, lam: float, mu: float) -> np.ndarray:
    """Neo-Hookean Cauchy stress of the skeleton.

    sigma_eff = (mu b + (lam ln J - mu) I) / J with b = F F^T.  Accepts
    (..., 2, 2) plane-strain or (..., 3, 3) gradients and returns the same
    shape; vanishes at F = I and transforms objectively.
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    J = _det(F)
    _check_positive_J(J)
    b = F @ np.swapaxes(F, -1, -2)
    eye = np.eye(d)
    return (mu * b + (lam * np.log(J) - mu)[..., None, None] * eye) / J[..., None, None]


def strain_energy_density(F, lam: float, mu: float) -> np.ndarray:
    """Stored energy density W = mu/2 (tr b - 3) - mu ln J + lam/2 (ln J)^2.

    Differentiating W recovers the Kirchhoff stress J * sigma_eff; for 2x2
    input the unit out-of-plane stretch contributes 1 to tr b.
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    J = _det(F)
    _check_positive_J(J)
    trb = np.einsum("...ij,...ij->...", F, F) + (3 - d)
    lnJ = np.log(J)
    return 0.5 * mu * (trb - 3.0) - mu * lnJ + 0.5 * lam * lnJ**2


def tangent_stiffness(F, lam: float, mu: float) -> np.ndarray:
    """Spatial tangent of the effective stress (Truesdell-rate modulus).

    D_ijkl = [lam d_ij d_kl + (mu - lam ln J)(d_ik d_jl + d_il d_jk)] / J,
    shape (..., d, d, d, d); at F = I this is the small-strain isotropic
    tensor with constants (lam, mu).
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    J = _det(F)
    _check_positive_J(J)
    eye = np.eye(d)
    ii = np.einsum("ij,kl->ijkl", eye, eye)
    sym = np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
    lam_eff = lam / J
    mu_eff = (mu - lam * np.log(J)) / J
    return lam_eff[..., None, None, None, None] * ii + mu_eff[..., None, None, None, None] * sym


def fluid_density(p, fluid: FluidParams) -> np.ndarray:
    """Barotropic fluid density rho_f = rho_f0 exp((p - p0) / kappa_f)."""
    p = np.asarray(p, dtype=float)
    return fluid.rho_f0 * np.exp((p - fluid.p0) / fluid.kappa_f)


def porosity_and_density(J, p, solid: SolidParams, fluid: FluidParams):
    """Solid fraction, porosity and mixture density at volume ratio J.

    phi_s = phi_s0 / J, phi = 1 - phi_s, rho_bar = phi rho_f + (1 - phi) rho_s0.
    Raises :class:`NonPhysicalStateError` when the pores close (phi <= 0).
    """
    J = np.asarray(J, dtype=float)
    _check_positive_J(J)
    phi_s = solid.phi_s0 / J
    phi = 1.0 - phi_s
    if np.any(phi <= 0.0):
        raise NonPhysicalStateError(
            f"porosity must stay positive; J reached {np.min(J):.4f} "
            f"with phi_s0 = {solid.phi_s0}"
        )
    rho_bar = phi * fluid_density(p, fluid) + phi_s * solid.rho_s0
    return phi_s, phi, rho_bar


def biot_coefficients(J, phi, fluid: FluidParams, dim: int = 2):
    """Storage modulus M = phi / kappa_f, coupling B = I, permeability K.

    K = k0 exp(varkappa (J - 1)) I.  Tensors carry the batch shape of J with
    trailing (dim, dim) axes.
    """
    J = np.asarray(J, dtype=float)
    phi = np.asarray(phi, dtype=float)
    _check_positive_J(J)
    eye = np.eye(dim)
    M = phi / fluid.kappa_f
    B = np.broadcast_to(eye, J.shape + (dim, dim))
    K = fluid.k0 * np.exp(fluid.varkappa * (J - 1.0))[..., None, None] * eye
    return M, B, K


def coefficient_variations(J, div_u_star, solid: SolidParams, fluid: FluidParams, dim: int = 2):
    """Variations of (M, K, B) under a convection increment with divergence div_u_star.

    dM = -(phi_s0 / (J kappa_f)) div_u_star,
    dK = J varkappa k0 exp(varkappa (J - 1)) div_u_star I, and dB = 0 since
    the coupling tensor is the identity.
    """
    J = np.asarray(J, dtype=float)
    div_u_star = np.asarray(div_u_star, dtype=float)
    _check_positive_J(J)
    eye = np.eye(dim)
    dM = -(solid.phi_s0 / (J * fluid.kappa_f)) * div_u_star
    kscal = fluid.k0 * np.exp(fluid.varkappa * (J - 1.0))
    dK = (J * fluid.varkappa * kscal * div_u_star)[..., None, None] * eye
    dB = np.zeros(np.broadcast_shapes(J.shape, div_u_star.shape) + (dim, dim))
    return dM, dK, dB


def _div(grad_v):
    return np.trace(grad_v, axis1=-2, axis2=-1)


def convected_coupling(B, grad_v) -> np.ndarray:
    """B~(v) = B div v - B (grad v)^T."""
    B = np.asarray(B, dtype=float)
    grad_v = np.asarray(grad_v, dtype=float)
    return B * _div(grad_v)[..., None, None] - B @ np.swapaxes(grad_v, -1, -2)


def convected_permeability(K, grad_v) -> np.ndarray:
    """K~(v) = (div v) K - K (grad v)^T - (grad v) K."""
    K = np.asarray(K, dtype=float)
    grad_v = np.asarray(grad_v, dtype=float)
    return (
        _div(grad_v)[..., None, None] * K
        - K @ np.swapaxes(grad_v, -1, -2)
        - grad_v @ K
    )


def dynamic_permeability(K, grad_v, q, kappa_f: float) -> np.ndarray:
    """K^(v, q) = [I (q / kappa_f + div v) - grad v] K."""
    K = np.asarray(K, dtype=float)
    grad_v = np.asarray(grad_v, dtype=float)
    q = np.asarray(q, dtype=float)
    d = K.shape[-1]
    scal = q / kappa_f + _div(grad_v)
    return (scal[..., None, None] * np.eye(d) - grad_v) @ K


def convected_compressibility(M, grad_v) -> np.ndarray:
    """M~(v) = M div v."""
    return np.asarray(M, dtype=float) * _div(np.asarray(grad_v, dtype=float))


def density_perturbation(phi, rho_f, rho_s: float, grad_v, q, kappa_f: float) -> np.ndarray:
    """Mixture-density perturbation R~(v, q) = (rho_f - rho_s)(1 - phi) div v + phi rho_f q / kappa_f."""
    phi = np.asarray(phi, dtype=float)
    rho_f = np.asarray(rho_f, dtype=float)
    q = np.asarray(q, dtype=float)
    div = _div(np.asarray(grad_v, dtype=float))
    return (rho_f - rho_s) * (1.0 - phi) * div + phi * rho_f * q / kappa_f


def geometric_tangent(D_eff, sigma_eff, p_hat, B) -> np.ndarray:
    """Modified stiffness A~ combining material, geometric and pressure terms.

    A~_ijkl = D_ijkl + sigma_eff_lj d_ki + p_hat (B_il d_jk - B_ij d_kl).
    """
    D_eff = np.asarray(D_eff, dtype=float)
    sigma_eff = np.asarray(sigma_eff, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    B = np.asarray(B, dtype=float)
    d = D_eff.shape[-1]
    eye = np.eye(d)
    geo = np.einsum("...lj,ki->...ijkl", sigma_eff, eye)
    press = np.einsum("...il,jk->...ijkl", B, eye) - np.einsum("...ij,kl->...ijkl", B, eye)
    return D_eff + geo + p_hat[..., None, None, None, None] * press


def material_point(F, p, solid: SolidParams, fluid: FluidParams) -> MaterialPoint:
    """Evaluate the full pointwise state from the deformation gradient and pressure."""
    F = np.asarray(F, dtype=float)
    p = np.asarray(p, dtype=float)
    J = _det(F)
    _check_positive_J(J)
    _, phi, rho_bar = porosity_and_density(J, p, solid, fluid)
    return MaterialPoint(
        F=F,
        J=J,
        b=F @ np.swapaxes(F, -1, -2),
        p=p,
        phi=phi,
        rho_f=fluid_density(p, fluid),
        rho_bar=rho_bar,
        sigma_eff=effective_stress(F, solid.lam, solid.mu),
    )


def modified_tensors(
    point: MaterialPoint,
    D_eff,
    coeffs: CoefficientSet,
    u_star_grad,
    p_star,
    solid: SolidParams,
    fluid: FluidParams,
    p_hat=None,
) -> CoefficientSet:
    """Fill the modified tensors of the incremental forms at a linearisation state.

    ``u_star_grad`` is the spatial gradient of the convection increment and
    ``p_star`` the matching pressure increment; ``p_hat`` defaults to the
    point's pressure.  All modified tensors vanish for zero convection.
    """
    p_hat = point.p if p_hat is None else p_hat
    return CoefficientSet(
        M=coeffs.M,
        B=coeffs.B,
        K=coeffs.K,
        dM=coeffs.dM,
        dB=coeffs.dB,
        dK=coeffs.dK,
        A_tilde=geometric_tangent(D_eff, point.sigma_eff, p_hat, coeffs.B),
        B_tilde=convected_coupling(coeffs.B, u_star_grad),
        K_tilde=convected_permeability(coeffs.K, u_star_grad),
        K_hat=dynamic_permeability(coeffs.K, u_star_grad, p_star, fluid.kappa_f),
        M_tilde=convected_compressibility(coeffs.M, u_star_grad),
        R_tilde=density_perturbation(
            point.phi, point.rho_f, solid.rho_s0, u_star_grad, p_star, fluid.kappa_f
        ),
    )
