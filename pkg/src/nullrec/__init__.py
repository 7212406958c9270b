"""Fast-slow diffusions whose fast component is a one-dimensional Brownian motion.

The slow state ``Y`` feels the fast motion only near the origin, so its
fluctuations around the averaged flow are governed by the Brownian local time
at 0 rather than by an ergodic average.  The package simulates the prelimit
system, estimates local times, builds the limit process driven by
``W2(L(t, 0))`` and checks the convergence statistically.
"""

from .coefficients import (
    CoefficientSet,
    NonIntegrableError,
    build_catalog_entry,
    catalog,
    check_assumptions,
    l1_norm_envelope,
    register_entry,
)
from .deterministic import (
    DiffusionKernel,
    FundamentalMatrix,
    OdeSolution,
    QuadratureSpec,
    diffusion_kernel,
    drift_integral,
    fundamental_matrix,
    psd_sqrt,
    solve_ode,
)
from .errors import BlowUpError, IntegrationError, NumericalDegeneracyError
from .limit import (
    FractionalKineticPath,
    LimitDeviationPath,
    corollary_ensemble,
    integrate_against_dL,
    integrate_against_V,
    resample_V,
    sample_corollary_pair,
    sample_V,
    sample_zeta0,
    sample_zeta_tilde0,
    V_ensemble,
    zeta0_ensemble,
    zeta_tilde0_ensemble,
)
from .localtime import (
    LocalTimeCurve,
    local_time_ensemble,
    local_time_occupation,
    local_time_tanaka,
    occupation_identity_check,
)
from .paths import (
    SamplePath,
    SeedSpec,
    TimeGrid,
    TrajectoryEnsemble,
    make_grid,
    sample_brownian,
    sample_ensemble,
    set_default_threads,
)
from .report import VerificationReport
from .sde import (
    CoupledTrajectory,
    EpsilonSchedule,
    ResolutionWarning,
    deviation,
    simulate_J,
    simulate_pair_general,
    simulate_Y_ensemble,
    simulate_Y_unit_phi,
    simulate_Z,
)
from .stats import EmpiricalLaw, ks_distance, loglog_fit, mean_se, normality_pvalue
from .timechange import TimeChange, compute_time_change, transformed_coefficients, verify_timechange_limit
from .verify import (
    check_char_function,
    check_lemma_L1_bound,
    check_lemma_rate,
    check_reduction,
    check_weak_convergence,
    oscillator_demo,
)

__version__ = "0.1.0"
