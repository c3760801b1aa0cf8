"""Energy-driven quantum state reduction: integrators for the nonlinear
stochastic master equation, the exact filtering solution, and a Monte Carlo
harness that verifies the model's analytic consequences."""

from .dynamics import (
    NoisePath,
    TimeGrid,
    Trajectory,
    integrate_lindblad,
    lindblad_rhs,
    sample_noise,
    simulate_sme,
    sme_euler_raw,
    sme_step,
    sse_step,
    variance_bound,
)
from .errors import ReductionLabError
from .filtering import (
    FilterModel,
    FilterWeights,
    InformationPath,
    closed_form_state,
    closed_form_trajectory,
    default_horizon,
    energy_estimate,
    filter_weights,
    make_information_path,
    phi_process,
    recovered_brownian,
    sample_terminal_energy,
    state_decomposition,
    type_d_decomposition,
)
from .harness import EnsembleConfig, EnsembleSummary, Verdict, run_ensemble
from .spectral import (
    DEFAULT_TOLS,
    DensityMatrix,
    HermitianOperator,
    SpectralDecomposition,
    StateMoments,
    ToleranceSet,
    hermitian_operator,
    luders_state,
    moments,
    offdiag_norms,
    spectral_decompose,
    validate_density,
)

__version__ = "0.1.0"
