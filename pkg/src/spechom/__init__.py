"""Spectral approximation of homogenized coefficients for lattice conductance models."""

from .errors import (
    ConvergenceError,
    GeometryMismatchError,
    MaskError,
    OversizeCellError,
    SpecHomError,
)
from .lattice import (
    Environment,
    Topology,
    apply_operator,
    builtin_checkerboard4,
    cell_average_axi,
    divergence_star,
    energy_average,
    environment_from_conductances,
    gradient,
    homogeneous_environment,
    local_drift,
    product_average,
    read_environment,
    tile_to_box,
    tile_to_torus,
    uniform_mask,
    unit_direction,
    write_environment,
)
from .scheme import (
    EstimateReport,
    Filter,
    SchemeCoefficients,
    build_mask,
    coefficients,
    estimate,
    estimate_from_correctors,
    filter_from_name,
    scaled_dmuk,
)
from .convergence import ConvergenceResult, convergence_study, write_convergence_csv
from .montecarlo import (
    EnvironmentLaw,
    ScalingRule,
    StudyResult,
    TwoPoint,
    Uniform,
    parse_distribution,
    parse_scaling_rule,
    sample_environment,
    variance_study,
    write_samples_csv,
    write_summary_csv,
)
from .solver import (
    CorrectorSet,
    Preconditioner,
    SolveConfig,
    exact_homogenized,
    solve_corrector_set,
    solve_exact_corrector,
    solve_modified_corrector,
)
from .spectral import (
    SpectralMeasure,
    a_mu_k_spectral,
    ahom_spectral,
    assemble_dense,
    corrector_l2_spectral,
    spectral_measure,
    systematic_error_curve,
    systematic_error_spectral,
)

__version__ = "0.1.0"
