"""Derived quantities and file I/O: VTK snapshots, CSV time series, configs.

Output formats are deterministic: fixed column order, repr-exact floating
point formatting and newline-only line endings, so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from . import materials as mat
from .assembly import _mapping_arrays, _DN1, _DN2, _N1, VOLUME_RULE
from .linear import NewmarkParams
from .materials import FluidParams, SolidParams
from .mesh import Mesh2D

__all__ = [
    "ConfigError",
    "CaseConfig",
    "deformation_measures",
    "seepage_velocity",
    "dissipation",
    "write_snapshot",
    "read_snapshot",
    "write_timeseries",
    "read_timeseries",
    "read_config",
    "parse_config",
]


class ConfigError(ValueError):
    """Malformed or non-physical configuration input."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# derived fields
# ---------------------------------------------------------------------------


def deformation_measures(mesh: Mesh2D, solid: SolidParams, elements=None):
    """Volume ratio J and stored energy density W at the quadrature points.

    Returns arrays of shape (n_selected_elements, n_qp); ``elements`` selects
    a subset (default: all).
    """
    conn = mesh.conn_q2 if elements is None else mesh.conn_q2[np.asarray(elements)]
    jac_c, det_c, _ = _mapping_arrays(mesh.coords, conn, _DN2)
    jac_0, det_0, inv_0 = _mapping_arrays(mesh.coords0, conn, _DN2)
    F = np.einsum("eqkl,eqlm->eqkm", jac_c, inv_0)
    J = det_c / det_0
    W = mat.strain_energy_density(F, solid.lam, solid.mu)
    return J, W


def seepage_velocity(K, rho_f, grad_p, body_force=None, accel=None) -> np.ndarray:
    """Relative fluid flux w = -K (grad p - rho_f (f - a)).

    All arguments broadcast; ``body_force`` and ``accel`` default to zero.
    """
    K = np.asarray(K, dtype=float)
    grad_p = np.asarray(grad_p, dtype=float)
    rho_f = np.asarray(rho_f, dtype=float)
    drive = grad_p.copy()
    if body_force is not None:
        drive = drive - rho_f[..., None] * np.asarray(body_force, dtype=float)
    if accel is not None:
        drive = drive + rho_f[..., None] * np.asarray(accel, dtype=float)
    return -np.einsum("...ij,...j->...i", K, drive)


def _pressure_gradients(mesh: Mesh2D, p, deformed: bool):
    coords = mesh.coords if deformed else mesh.coords0
    _, det, inv = _mapping_arrays(coords, mesh.conn_q2, _DN2)
    gN1 = np.einsum("qnl,eqlk->eqnk", _DN1, inv)
    grad_p = np.einsum("en,eqnk->eqk", np.asarray(p, dtype=float)[mesh.conn_q1], gN1)
    wdet = VOLUME_RULE.weights[None, :] * det
    return wdet, grad_p


def dissipation(mesh: Mesh2D, p, fluid: FluidParams, deformed: bool = True) -> float:
    """Seepage dissipation power, the domain integral of K grad p . grad p.

    With ``deformed`` the integral runs over the current configuration with
    the dilation-dependent permeability; otherwise over the initial
    configuration with the reference permeability (the linear model's
    convention).  Nonnegative since the permeability is positive definite.
    """
    wdet, grad_p = _pressure_gradients(mesh, p, deformed)
    if deformed:
        jac_c, det_c, _ = _mapping_arrays(mesh.coords, mesh.conn_q2, _DN2)
        _, det_0, _ = _mapping_arrays(mesh.coords0, mesh.conn_q2, _DN2)
        kscal = fluid.k0 * np.exp(fluid.varkappa * (det_c / det_0 - 1.0))
    else:
        kscal = fluid.k0
    return float(np.sum(wdet * kscal * np.einsum("eqk,eqk->eq", grad_p, grad_p)))


def seepage_magnitude_cells(mesh: Mesh2D, p, fluid: FluidParams, accel=None) -> np.ndarray:
    """Element-averaged |w| on the current configuration."""
    from .assembly import _N2

    wdet, grad_p = _pressure_gradients(mesh, p, deformed=True)
    _, det_c, _ = _mapping_arrays(mesh.coords, mesh.conn_q2, _DN2)
    _, det_0, _ = _mapping_arrays(mesh.coords0, mesh.conn_q2, _DN2)
    kscal = fluid.k0 * np.exp(fluid.varkappa * (det_c / det_0 - 1.0))
    drive = grad_p
    if accel is not None:
        pq = np.einsum("qn,en->eq", _N1, np.asarray(p, dtype=float)[mesh.conn_q1])
        rho_f = mat.fluid_density(pq, fluid)
        acc_q = np.einsum("qn,eni->eqi", _N2, np.asarray(accel, dtype=float)[mesh.conn_q2])
        drive = drive + rho_f[..., None] * acc_q
    w = -kscal[..., None] * drive
    return np.linalg.norm(w, axis=-1).mean(axis=1)


# ---------------------------------------------------------------------------
# VTK snapshots (legacy ASCII, biquadratic quads)
# ---------------------------------------------------------------------------

_VTK_BIQUADRATIC_QUAD = 28


def write_snapshot(path, mesh: Mesh2D, point_data=None, cell_data=None, title="porofem fields"):
    """Write the mesh and fields as a legacy-ASCII VTK unstructured grid.

    ``point_data`` maps names to per-Q2-node scalars (n,) or vectors (n, 2);
    ``cell_data`` maps names to per-element scalars.  Values survive a
    write/read round trip to full double precision.
    """
    point_data = point_data or {}
    cell_data = cell_data or {}
    n, ne = mesh.n_nodes, mesh.n_elements
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    for x, y in mesh.coords:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {ne} {ne * 10}")
    for row in mesh.conn_q2:
        lines.append("9 " + " ".join(str(i) for i in row))
    lines.append(f"CELL_TYPES {ne}")
    lines.extend([str(_VTK_BIQUADRATIC_QUAD)] * ne)

    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 2:
                lines.append(f"VECTORS {name} double")
                for vx, vy in values:
                    lines.append(f"{_fmt(vx)} {_fmt(vy)} 0")
            else:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in values)
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in values)

    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise OSError(f"cannot write snapshot {path}: {err}") from err


def read_snapshot(path):
    """Parse a snapshot written by :func:`write_snapshot`.

    Returns (points, cells, point_data, cell_data).
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    i = 0

    def expect(prefix):
        nonlocal i
        while not tokens[i].strip():
            i += 1
        line = tokens[i]
        if not line.startswith(prefix):
            raise ValueError(f"{path}: expected {prefix!r}, found {line!r}")
        i += 1
        return line

    expect("# vtk DataFile")
    i += 1  # title
    expect("ASCII")
    expect("DATASET UNSTRUCTURED_GRID")
    n = int(expect("POINTS").split()[1])
    points = np.array([[float(v) for v in tokens[i + j].split()] for j in range(n)])[:, :2]
    i += n
    ne = int(expect("CELLS").split()[1])
    cells = np.array([[int(v) for v in tokens[i + j].split()[1:]] for j in range(ne)])
    i += ne
    expect("CELL_TYPES")
    i += ne

    point_data, cell_data = {}, {}
    target, count = None, 0
    while i < len(tokens):
        line = tokens[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("POINT_DATA"):
            target, count = point_data, n
        elif line.startswith("CELL_DATA"):
            target, count = cell_data, ne
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            vals = np.array([[float(v) for v in tokens[i + j].split()] for j in range(count)])
            target[name] = vals[:, :2]
            i += count
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            i += 1  # LOOKUP_TABLE
            target[name] = np.array([float(tokens[i + j]) for j in range(count)])
            i += count
        else:
            raise ValueError(f"{path}: unrecognised section {line!r}")
    return points, cells, point_data, cell_data


def pressure_on_q2_nodes(mesh: Mesh2D, p) -> np.ndarray:
    """Interpolate the Q1 pressure field onto every Q2 node (for point output)."""
    from .mesh import Q2_LOCAL_XI, q1_shape

    out = np.zeros(mesh.n_nodes)
    vals, _ = q1_shape(Q2_LOCAL_XI)  # (9, 4)
    pe = np.asarray(p, dtype=float)[mesh.conn_q1]
    nodal = np.einsum("nl,el->en", vals, pe)
    out[mesh.conn_q2] = nodal
    return out


# ---------------------------------------------------------------------------
# CSV time series
# ---------------------------------------------------------------------------


def write_timeseries(path, columns: dict):
    """Write named columns as CSV with a fixed header and full precision.

    ``columns`` maps names to equal-length 1D arrays; insertion order is the
    column order.  Records must be nonempty.
    """
    names = list(columns)
    if not names:
        raise ValueError("no columns to write")
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    length = arrays[0].shape[0]
    if length == 0:
        raise ValueError("time series records are empty")
    if any(a.shape != (length,) for a in arrays):
        raise ValueError("all columns must be 1D and of equal length")
    lines = [",".join(names)]
    for row in zip(*arrays):
        lines.append(",".join(_fmt(v) for v in row))
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise OSError(f"cannot write time series {path}: {err}") from err


def read_timeseries(path):
    """Read a CSV written by :func:`write_timeseries`: (names, array (n, ncol))."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    names = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return names, data


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

_SCHEMA = {
    "mesh": {"nx": int, "ny": int, "lx": float, "ly": float},
    "solid": {"lambda": float, "mu": float, "rho_s0": float, "phi_s0": float},
    "fluid": {"rho_f0": float, "kappa_f": float, "p0": float, "k0": float, "varkappa": float},
    "bc": {"preset": str},
    "load": {"hbar": float},
    "schedule": {"dt": float, "n_steps": int, "probes": str, "probe_cell": str},
    "model": {"kind": str, "newmark_beta": float, "newmark_gamma": float},
}
_OPTIONAL = {
    ("fluid", "p0"),
    ("schedule", "probes"),
    ("schedule", "probe_cell"),
    ("model", "newmark_beta"),
    ("model", "newmark_gamma"),
}
_BC_PRESETS = ("compression", "partial_compression")
_MODELS = ("nonlinear", "linear_bd", "linear_newmark")


@dataclass(frozen=True)
class CaseConfig:
    """Validated, fully-specified case description."""

    nx: int
    ny: int
    lx: float
    ly: float
    solid: SolidParams
    fluid: FluidParams
    bc_preset: str
    hbar: float
    dt: float
    n_steps: int
    probes: tuple
    probe_cell: tuple
    model: str
    newmark: NewmarkParams


def _parse_point(text, where):
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected 'x,y', got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ConfigError(f"{where}: expected 'x,y', got {text!r}") from None


def parse_config(text: str) -> CaseConfig:
    """Validate and convert INI-style configuration text.

    Every malformed input yields a :class:`ConfigError` naming the offending
    section and key.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse configuration: {err}") from err

    values = {}
    for section, keys in _SCHEMA.items():
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]")
        for key in parser.options(section):
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}")
        for key, conv in keys.items():
            if not parser.has_option(section, key):
                if (section, key) in _OPTIONAL:
                    continue
                raise ConfigError(f"missing required key {section}.{key}")
            raw = parser.get(section, key)
            if conv is str:
                values[(section, key)] = raw.strip()
            else:
                try:
                    values[(section, key)] = conv(float(raw)) if conv is int else conv(raw)
                except ValueError:
                    raise ConfigError(
                        f"{section}.{key}: cannot convert {raw!r} to {conv.__name__}"
                    ) from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")

    def get(section, key, default=None):
        return values.get((section, key), default)

    nx, ny = get("mesh", "nx"), get("mesh", "ny")
    lx, ly = get("mesh", "lx"), get("mesh", "ly")
    if nx < 1 or ny < 1:
        raise ConfigError(f"mesh.nx/mesh.ny: element counts must be >= 1, got {nx}, {ny}")
    if lx <= 0 or ly <= 0:
        raise ConfigError(f"mesh.lx/mesh.ly: side lengths must be > 0, got {lx}, {ly}")

    try:
        solid = SolidParams(
            lam=get("solid", "lambda"),
            mu=get("solid", "mu"),
            rho_s0=get("solid", "rho_s0"),
            phi_s0=get("solid", "phi_s0"),
        )
    except ValueError as err:
        raise ConfigError(f"solid: {err}") from None
    try:
        fluid = FluidParams(
            rho_f0=get("fluid", "rho_f0"),
            kappa_f=get("fluid", "kappa_f"),
            p0=get("fluid", "p0", 0.0),
            k0=get("fluid", "k0"),
            varkappa=get("fluid", "varkappa"),
        )
    except ValueError as err:
        raise ConfigError(f"fluid: {err}") from None

    preset = get("bc", "preset")
    if preset not in _BC_PRESETS:
        raise ConfigError(f"bc.preset: unknown preset {preset!r}, expected one of {_BC_PRESETS}")
    model = get("model", "kind")
    if model not in _MODELS:
        raise ConfigError(f"model.kind: unknown model {model!r}, expected one of {_MODELS}")

    dt, n_steps = get("schedule", "dt"), get("schedule", "n_steps")
    if dt <= 0:
        raise ConfigError(f"schedule.dt: must be > 0, got {dt}")
    if n_steps < 1:
        raise ConfigError(f"schedule.n_steps: must be >= 1, got {n_steps}")

    probes = []
    raw_probes = get("schedule", "probes")
    if raw_probes:
        for item in raw_probes.split(";"):
            item = item.strip()
            if not item:
                continue
            if ":" not in item:
                raise ConfigError(f"schedule.probes: expected 'name:x,y', got {item!r}")
            name, pt = item.split(":", 1)
            probes.append((name.strip(), _parse_point(pt, "schedule.probes")))
    raw_cell = get("schedule", "probe_cell")
    probe_cell = _parse_point(raw_cell, "schedule.probe_cell") if raw_cell else (lx / 2, ly / 2)

    return CaseConfig(
        nx=nx,
        ny=ny,
        lx=lx,
        ly=ly,
        solid=solid,
        fluid=fluid,
        bc_preset=preset,
        hbar=get("load", "hbar"),
        dt=dt,
        n_steps=n_steps,
        probes=tuple(probes),
        probe_cell=probe_cell,
        model=model,
        newmark=NewmarkParams(
            beta=get("model", "newmark_beta", 0.25),
            gamma=get("model", "newmark_gamma", 0.5),
        ),
    )


def read_config(path) -> CaseConfig:
    """Read and validate a configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from err
    return parse_config(text)
