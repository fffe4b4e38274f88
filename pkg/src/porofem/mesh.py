"""Structured quadrilateral meshes with biquadratic (Q2) and bilinear (Q1) bases.

Displacements live on the 9-node Q2 nodes, the fluid pressure on the 4-node
Q1 corner subset.  The mesh keeps two coordinate sets: ``coords0`` is the
initial (reference) configuration, ``coords`` the current one; coordinate
updates produce a new mesh snapshot, so a mesh value is never mutated in
place.  Geometry is biquadratic isoparametric, matching the displacement
basis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

__all__ = [
    "MeshError",
    "InvertedElementError",
    "QuadratureRule",
    "FieldSample",
    "ElementMap",
    "Mesh2D",
    "gauss_rule_1d",
    "gauss_rule_2d",
    "q2_shape",
    "q1_shape",
    "build_structured_grid",
    "map_element",
    "recover_gradients",
    "update_coordinates",
    "add_boundary_region",
    "nodes_where",
    "pressure_nodes_where",
    "nearest_node",
    "containing_element",
]


class MeshError(ValueError):
    """Invalid mesh construction or query."""


class InvertedElementError(MeshError):
    """Non-positive mapping Jacobian determinant."""


# Local Q2 node layout on the reference square [-1, 1]^2:
# corners 0-3 counterclockwise from (-1, -1), edge midpoints 4-7
# (bottom, right, top, left), centre node 8.
Q2_LOCAL_XI = np.array(
    [
        [-1.0, -1.0],
        [1.0, -1.0],
        [1.0, 1.0],
        [-1.0, 1.0],
        [0.0, -1.0],
        [1.0, 0.0],
        [0.0, 1.0],
        [-1.0, 0.0],
        [0.0, 0.0],
    ]
)
Q1_LOCAL_XI = Q2_LOCAL_XI[:4]

# Q2 node triples along each local edge, in counterclockwise traversal order.
EDGE_Q2_NODES = np.array([[0, 4, 1], [1, 5, 2], [2, 6, 3], [3, 7, 0]])


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss rule on the reference square (or segment).

    ``points`` has shape (n, 2) for the square, (n, 1) for the segment;
    weights sum to the reference measure (4 resp. 2) and the rule is exact
    for polynomials up to ``degree`` per coordinate.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


@dataclass(frozen=True)
class FieldSample:
    """Point sample of a nodal field: value plus spatial and material gradients."""

    value: np.ndarray
    spatial_gradient: np.ndarray
    material_gradient: np.ndarray


@dataclass(frozen=True)
class ElementMap:
    """Isoparametric mapping data at a single reference point."""

    jacobian: np.ndarray
    determinant: float
    inverse: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class Mesh2D:
    """Quadrilateral mesh with dual Q2/Q1 node sets.

    Attributes
    ----------
    coords : ndarray, shape (n_nodes, 2)
        Current nodal coordinates.
    coords0 : ndarray, shape (n_nodes, 2)
        Initial coordinates, kept so total deformation gradients remain
        available after configuration updates.
    conn_q2 : ndarray, shape (n_elements, 9)
        Q2 connectivity (local layout as in ``Q2_LOCAL_XI``).
    conn_q1 : ndarray, shape (n_elements, 4)
        Q1 connectivity into the pressure numbering.
    q1_to_q2 : ndarray, shape (n_pressure_nodes,)
        Map from pressure node ids to the corresponding Q2 node ids.
    boundary_regions : dict
        Named arrays of boundary edges, each row ``(element, local_edge)``.
    """

    coords: np.ndarray
    coords0: np.ndarray
    conn_q2: np.ndarray
    conn_q1: np.ndarray
    q1_to_q2: np.ndarray
    boundary_regions: dict

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_pressure_nodes(self) -> int:
        return self.q1_to_q2.shape[0]

    @property
    def n_elements(self) -> int:
        return self.conn_q2.shape[0]


def gauss_rule_1d(n: int = 3) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1]."""
    pts, wts = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(pts.reshape(-1, 1), wts, degree=2 * n - 1)


def gauss_rule_2d(n: int = 3) -> QuadratureRule:
    """Tensor-product Gauss rule on [-1, 1]^2 (n x n points)."""
    pts, wts = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(pts, pts, indexing="ij")
    points = np.column_stack([xi.ravel(), eta.ravel()])
    weights = np.outer(wts, wts).ravel()
    return QuadratureRule(points, weights, degree=2 * n - 1)


def _lagrange_quadratic(s):
    """Values and derivatives of the 1D quadratic Lagrange basis at nodes -1, 0, 1."""
    s = np.asarray(s, dtype=float)
    vals = np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)], axis=-1)
    ders = np.stack([s - 0.5, -2.0 * s, s + 0.5], axis=-1)
    return vals, ders


# Index of each local node into the (xi-basis, eta-basis) tensor product,
# following the Q2_LOCAL_XI layout with 1D node order (-1, 0, 1).
_Q2_TENSOR_IDX = np.array(
    [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1)]
)


def q2_shape(xi):
    """Biquadratic shape functions and reference gradients.

    Parameters
    ----------
    xi : array_like, shape (..., 2)

    Returns
    -------
    values : ndarray, shape (..., 9)
    gradients : ndarray, shape (..., 9, 2)
    """
    xi = np.asarray(xi, dtype=float)
    lx, dlx = _lagrange_quadratic(xi[..., 0])
    ly, dly = _lagrange_quadratic(xi[..., 1])
    ix, iy = _Q2_TENSOR_IDX[:, 0], _Q2_TENSOR_IDX[:, 1]
    vals = lx[..., ix] * ly[..., iy]
    grads = np.stack([dlx[..., ix] * ly[..., iy], lx[..., ix] * dly[..., iy]], axis=-1)
    return vals, grads


def q1_shape(xi):
    """Bilinear shape functions and reference gradients, shapes (..., 4) and (..., 4, 2)."""
    xi = np.asarray(xi, dtype=float)
    s, t = xi[..., 0], xi[..., 1]
    sn, tn = Q1_LOCAL_XI[:, 0], Q1_LOCAL_XI[:, 1]
    vals = 0.25 * (1.0 + s[..., None] * sn) * (1.0 + t[..., None] * tn)
    grads = np.stack(
        [
            0.25 * sn * (1.0 + t[..., None] * tn),
            0.25 * tn * (1.0 + s[..., None] * sn),
        ],
        axis=-1,
    )
    return vals, grads


def build_structured_grid(nx: int, ny: int, lx: float, ly: float) -> Mesh2D:
    """Build an nx-by-ny grid of quadrilaterals on [0, lx] x [0, ly].

    Creates (2nx+1)(2ny+1) Q2 nodes, (nx+1)(ny+1) pressure nodes and the four
    boundary regions ``left``, ``right``, ``bottom`` and ``top``.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"element counts must be >= 1, got nx={nx}, ny={ny}")
    if lx <= 0.0 or ly <= 0.0:
        raise MeshError(f"side lengths must be positive, got lx={lx}, ly={ly}")

    mx, my = 2 * nx + 1, 2 * ny + 1
    x = np.linspace(0.0, lx, mx)
    y = np.linspace(0.0, ly, my)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    def q2_id(i, j):
        return j * mx + i

    conn_q2 = np.empty((nx * ny, 9), dtype=np.int64)
    conn_q1 = np.empty((nx * ny, 4), dtype=np.int64)
    for ey in range(ny):
        for ex in range(nx):
            e = ey * nx + ex
            i0, j0 = 2 * ex, 2 * ey
            conn_q2[e] = [
                q2_id(i0, j0),
                q2_id(i0 + 2, j0),
                q2_id(i0 + 2, j0 + 2),
                q2_id(i0, j0 + 2),
                q2_id(i0 + 1, j0),
                q2_id(i0 + 2, j0 + 1),
                q2_id(i0 + 1, j0 + 2),
                q2_id(i0, j0 + 1),
                q2_id(i0 + 1, j0 + 1),
            ]
            conn_q1[e] = [
                ey * (nx + 1) + ex,
                ey * (nx + 1) + ex + 1,
                (ey + 1) * (nx + 1) + ex + 1,
                (ey + 1) * (nx + 1) + ex,
            ]

    # Pressure nodes are the corner subset of the Q2 grid.
    pi, pj = np.meshgrid(np.arange(0, mx, 2), np.arange(0, my, 2), indexing="xy")
    q1_to_q2 = (pj * mx + pi).ravel()

    ex = np.arange(nx)
    ey = np.arange(ny)
    regions = {
        "bottom": np.column_stack([ex, np.zeros(nx, dtype=np.int64)]),
        "right": np.column_stack([ey * nx + (nx - 1), np.full(ny, 1, dtype=np.int64)]),
        "top": np.column_stack([(ny - 1) * nx + ex, np.full(nx, 2, dtype=np.int64)]),
        "left": np.column_stack([ey * nx, np.full(ny, 3, dtype=np.int64)]),
    }

    return Mesh2D(
        coords=coords,
        coords0=coords.copy(),
        conn_q2=conn_q2,
        conn_q1=conn_q1,
        q1_to_q2=q1_to_q2,
        boundary_regions=regions,
    )


def _mapping_arrays(coords, conn, ref_grads):
    """Jacobians of the isoparametric map for all elements at a batch of points.

    ``ref_grads`` has shape (nq, 9, 2); returns (jac, det, inv) with shapes
    (ne, nq, 2, 2), (ne, nq), (ne, nq, 2, 2), where jac[..., k, l] = dx_k/dxi_l.
    """
    xe = coords[conn]  # (ne, 9, 2)
    jac = np.einsum("enk,qnl->eqkl", xe, ref_grads)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    inv = np.empty_like(jac)
    inv[..., 0, 0] = jac[..., 1, 1]
    inv[..., 0, 1] = -jac[..., 0, 1]
    inv[..., 1, 0] = -jac[..., 1, 0]
    inv[..., 1, 1] = jac[..., 0, 0]
    inv = inv / det[..., None, None]
    return jac, det, inv


def _spatial_shape_gradients(ref_grads, inv_jac):
    """Push reference gradients (nq, n, 2) to physical ones (ne, nq, n, 2)."""
    return np.einsum("qnl,eqlk->eqnk", ref_grads, inv_jac)


def map_element(mesh: Mesh2D, elem: int, xi, initial: bool = False) -> ElementMap:
    """Isoparametric mapping data of one element at a reference point.

    Raises :class:`InvertedElementError` when the Jacobian determinant is
    not positive.
    """
    if not 0 <= elem < mesh.n_elements:
        raise MeshError(f"element id {elem} out of range")
    coords = mesh.coords0 if initial else mesh.coords
    vals, grads = q2_shape(np.asarray(xi, dtype=float))
    xe = coords[mesh.conn_q2[elem]]
    jac = np.einsum("nk,nl->kl", xe, grads)
    det = float(np.linalg.det(jac))
    if det <= 0.0:
        raise InvertedElementError(
            f"element {elem}: mapping determinant {det:.3e} <= 0 at xi={tuple(np.asarray(xi))}"
        )
    return ElementMap(
        jacobian=jac,
        determinant=det,
        inverse=np.linalg.inv(jac),
        x=vals @ xe,
    )


def recover_gradients(mesh: Mesh2D, nodal_field, elem: int, xi) -> FieldSample:
    """Interpolate a nodal field and its gradients at a reference point.

    The field is recognised by its leading dimension: Q2 fields are sized to
    the full node set, Q1 fields to the pressure numbering.  The spatial
    gradient uses the current coordinates, the material gradient the initial
    ones.
    """
    field = np.asarray(nodal_field, dtype=float)
    if field.shape[0] == mesh.n_nodes:
        vals, grads = q2_shape(np.asarray(xi, dtype=float))
        nodes = mesh.conn_q2[elem]
    elif field.shape[0] == mesh.n_pressure_nodes:
        vals, grads = q1_shape(np.asarray(xi, dtype=float))
        nodes = mesh.conn_q1[elem]
    else:
        raise MeshError(
            f"field length {field.shape[0]} matches neither Q2 ({mesh.n_nodes}) "
            f"nor Q1 ({mesh.n_pressure_nodes}) numbering"
        )
    fe = field[nodes]
    cur = map_element(mesh, elem, xi)
    ini = map_element(mesh, elem, xi, initial=True)
    value = vals @ fe
    # gradient convention: grad[i, k] = d(field_i)/dx_k
    spatial = np.einsum("n...,nl,lk->...k", fe, grads, cur.inverse)
    material = np.einsum("n...,nl,lk->...k", fe, grads, ini.inverse)
    return FieldSample(value=value, spatial_gradient=spatial, material_gradient=material)


_CHECK_RULE = gauss_rule_2d(3)


def _check_not_inverted(coords, conn):
    _, vol_grads = q2_shape(_CHECK_RULE.points)
    _, det, _ = _mapping_arrays(coords, conn, vol_grads)
    if np.any(det <= 0.0):
        bad = int(np.argwhere(np.any(det <= 0.0, axis=1))[0, 0])
        raise InvertedElementError(
            f"element {bad}: mapping determinant <= 0 after coordinate update"
        )


def update_coordinates(mesh: Mesh2D, delta_u) -> Mesh2D:
    """Return a new mesh with nodes translated by the Q2 increment field.

    The initial coordinates are retained unchanged.  Raises
    :class:`InvertedElementError` if the update inverts any element at the
    volume quadrature points.
    """
    delta_u = np.asarray(delta_u, dtype=float)
    if delta_u.shape != mesh.coords.shape:
        raise MeshError(
            f"increment shape {delta_u.shape} does not match node array {mesh.coords.shape}"
        )
    coords = mesh.coords + delta_u
    _check_not_inverted(coords, mesh.conn_q2)
    return replace(mesh, coords=coords)


def add_boundary_region(mesh: Mesh2D, name: str, predicate: Callable) -> Mesh2D:
    """Add a named boundary region selected by a predicate on edge midpoints.

    The predicate receives the midpoint of each exterior edge in the initial
    configuration and returns True to include the edge.
    """
    if name in mesh.boundary_regions:
        raise MeshError(f"boundary region {name!r} already exists")
    base = ("left", "right", "bottom", "top")
    edges = np.vstack([mesh.boundary_regions[r] for r in base])
    mids = []
    for elem, ledge in edges:
        nodes = mesh.conn_q2[elem, EDGE_Q2_NODES[ledge]]
        mids.append(mesh.coords0[nodes[1]])
    keep = np.array([bool(predicate(m)) for m in mids])
    if not keep.any():
        raise MeshError(f"boundary region {name!r} selects no edges")
    regions = dict(mesh.boundary_regions)
    regions[name] = edges[keep]
    return replace(mesh, boundary_regions=regions)


def nodes_where(mesh: Mesh2D, predicate: Callable, initial: bool = True) -> np.ndarray:
    """Ids of Q2 nodes whose (initial) coordinates satisfy the predicate."""
    coords = mesh.coords0 if initial else mesh.coords
    return np.flatnonzero([bool(predicate(x)) for x in coords])


def pressure_nodes_where(mesh: Mesh2D, predicate: Callable) -> np.ndarray:
    """Ids of pressure nodes whose initial coordinates satisfy the predicate."""
    coords = mesh.coords0[mesh.q1_to_q2]
    return np.flatnonzero([bool(predicate(x)) for x in coords])


def nearest_node(mesh: Mesh2D, xy, pressure: bool = False) -> int:
    """Id of the Q2 (or pressure) node closest to a point in the initial configuration."""
    coords = mesh.coords0[mesh.q1_to_q2] if pressure else mesh.coords0
    d = np.linalg.norm(coords - np.asarray(xy, dtype=float), axis=1)
    return int(np.argmin(d))


def containing_element(mesh: Mesh2D, xy) -> int:
    """Id of the element whose initial corner bounding box contains the point.

    Ties (points on element interfaces) resolve to the lowest element id.
    """
    xy = np.asarray(xy, dtype=float)
    corners = mesh.coords0[mesh.conn_q2[:, :4]]
    lo = corners.min(axis=1) - 1e-12
    hi = corners.max(axis=1) + 1e-12
    inside = np.all((xy >= lo) & (xy <= hi), axis=1)
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        raise MeshError(f"point {tuple(xy)} lies outside the mesh")
    return int(hits[0])
