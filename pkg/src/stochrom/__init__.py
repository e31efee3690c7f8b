"""stochrom: reduced-order models of bilinear SDEs learned from state data.

The package identifies low-dimensional surrogate SDEs that reproduce the
distribution (mean and covariance) of a high-dimensional bilinear SDE
with additive Gaussian noise, using only sampled state trajectories, and
compares them against the intrusive projection-based reference.
"""

__version__ = "0.1.0"

from .model import (
    BilinearSdeSystem,
    ConstantControl,
    ControlSignal,
    CosineControl,
    TimeGrid,
    ZeroControl,
    galerkin_project,
    parse_control,
    validate_system,
)
from .sim import (
    SeedPolicy,
    SnapshotEnsemble,
    iter_state_batches,
    sample_ensemble,
    sample_wiener_increments,
    simulate_path,
)
from .moments import (
    DerivativeTrajectory,
    MomentAccumulator,
    MomentTrajectory,
    empirical_covariance,
    empirical_mean,
    empirical_moments,
    exact_moments,
    finite_difference_derivative,
    gaussian_functional_expectations,
    integrate_covariance_ode,
    integrate_expectation_ode,
)
from .subspace import (
    PodBasis,
    ReductionBasis,
    basis_from_gram,
    build_moment_snapshot_matrix,
    build_state_snapshot_matrix,
    check_span_containment,
    compute_basis,
)
from .inference import (
    InferenceConfig,
    InferredRom,
    SdeOperatorInference,
    TrainingRun,
    assemble_cov_residuals,
    assemble_drift_dataset,
    factorize_diffusion,
    infer_rom,
    infer_rom_from_ensembles,
    solve_diffusion_lsq,
    solve_drift_lsq,
)
from .bounds import MomentDeviationBounds, moment_deviation_bounds
from .bench import (
    ErrorReport,
    ExperimentConfig,
    Heat1dSpec,
    Heat2dSpec,
    build_heat1d_fom,
    build_heat2d_fom,
    calibrate_heat2d_mesh,
    relative_errors,
    run_experiment,
    snr_sequence,
    weak_errors,
)
from .container import read_container, write_container

__all__ = [name for name in dir() if not name.startswith("_")]
