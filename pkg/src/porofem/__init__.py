"""Mixed Q2-Q1 finite elements for fluid-saturated porous media at large strain.

The package couples a neo-Hookean skeleton with Darcy pore flow on updated
configurations and integrates in time with an implicit predictor-corrector
pair of linear solves per step.  Linear (infinitesimal) comparators and an
analytic confined-compression state are included for validation.
"""

from .assembly import (
    BlockSystem,
    DirichletSet,
    LoadCase,
    Traction,
    apply_dirichlet,
    assemble_corrector,
    assemble_initial,
    assemble_predictor,
    residual_fluid,
    residual_solid,
)
from .cases import (
    CaseSetup,
    case_from_config,
    compression_case,
    partial_compression_case,
    run_case,
    timeseries_columns,
)
from .linear import (
    LinearBDStepper,
    LinearBiotSystem,
    NewmarkParams,
    NewmarkStepper,
    analytic_compression,
    assemble_linear_biot,
    linear_step_bd,
    linear_step_newmark,
)
from .materials import (
    CoefficientSet,
    FluidParams,
    MaterialPoint,
    NonPhysicalStateError,
    SolidParams,
    biot_coefficients,
    coefficient_variations,
    effective_stress,
    fluid_density,
    material_point,
    modified_tensors,
    porosity_and_density,
    strain_energy_density,
    tangent_stiffness,
)
from .mesh import (
    FieldSample,
    InvertedElementError,
    Mesh2D,
    MeshError,
    QuadratureRule,
    build_structured_grid,
    map_element,
    q1_shape,
    q2_shape,
    recover_gradients,
    update_coordinates,
)
from .postproc import (
    CaseConfig,
    ConfigError,
    dissipation,
    read_config,
    read_snapshot,
    read_timeseries,
    seepage_velocity,
    write_snapshot,
    write_timeseries,
)
from .stepping import (
    History,
    RunResult,
    Schedule,
    SolverError,
    initialize,
    run,
    solve_block,
    step,
)

__version__ = "0.1.0"
