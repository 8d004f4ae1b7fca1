"""Numerical Gaussian tube formulas and Minkowski functionals.

The library computes Gaussian Minkowski functionals of smooth regions in
ℝᵏ (closed forms and a kernel-smoothed co-area Monte Carlo estimator),
validates the tube expansion by direct distance-based Monte Carlo,
approximates functionals of Itô-integral regions through cylindrical
truncation, and checks the kinematic formula

    E[χ(A_u(f; M))] = Σ_j (2π)^{−j/2} · L_j(M) · M_j(F⁻¹[u, ∞))

by simulating random fields f(x) = ∫ V(B^x) dB^x on flat parameter spaces
and counting excursion-set Euler characteristics.
"""

__version__ = "0.1.0"

from .cylinder import (
    ConvergenceReport,
    CylFunctional,
    PotentialV,
    convergence_study,
    eval_Fn,
    grad_Fn,
    hess_Fn,
    limit_gmf_chisq,
)
from .errors import (
    ConfigError,
    DegeneratePointError,
    GausstubeError,
    ProjectionError,
    SurfaceDegeneracyError,
    ValidityRadiusError,
)
from .fields import (
    EcEstimate,
    FieldSample,
    ParamSpace,
    SpatialCov,
    crofton_lkc_rhs,
    ec_mc,
    ec_mc_levels,
    euler_char,
    excursion_volume_mc,
    gkf_rhs,
    lkc,
    simulate_field,
    validate_assumptions,
)
from .gmf import (
    GmfVector,
    RegionSpec,
    assemble_tube_series,
    gmf_ball,
    gmf_halfspace,
    gmf_surface_mc,
    gmf_two_sided,
)
from .harness import ExperimentConfig, RunResult, report, run
from .malliavin import (
    SmoothFunctional,
    VectorField,
    det2_exact,
    det2_series,
    divergence,
    jacobian_series,
    ramer_density,
    unit_normal,
)
from .series import (
    DEFAULT_ORDER,
    HermiteEval,
    TruncSeries,
    gaussian_pdf,
    gaussian_tail,
    hermite,
    hermite_all,
    series_add,
    series_exp,
    series_mul,
    series_scale,
)
from .tube import (
    DistanceOracle,
    ValidationReport,
    ball_oracle,
    dist_to_region,
    halfspace_oracle,
    projection_oracle,
    tube_volume_mc,
    two_sided_oracle,
    validate_tube_series,
)

__all__ = [name for name in dir() if not name.startswith("_")]
