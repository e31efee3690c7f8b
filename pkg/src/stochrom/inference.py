"""Nonintrusive recovery of reduced SDE coefficients from moment data.

Drift coefficients come from a linear least-squares fit of the mean
dynamics: with mean columns ``E``, control columns ``U`` and their
columnwise Kronecker product stacked into a data matrix ``D``, the finite
difference derivatives ``R`` of the means satisfy ``R = [A B N] D`` for
the exact moments, so ``[A B N]`` is fit by minimizing
``||R^T - D^T O^T||_F^2`` (optionally with blockwise Tikhonov penalties).

The diffusion is recovered from the covariance dynamics: the residual of
the homogeneous Lyapunov part, averaged over time, estimates the constant
inhomogeneity ``M K M^T``, whose truncated eigendecomposition yields a
diffusion factor driven by uncorrelated standard noise.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lstsq
from sklearn.base import BaseEstimator

from .model import BilinearSdeSystem
from .moments import finite_difference_derivative

__all__ = [
    "InferenceConfig",
    "DriftDataset",
    "assemble_drift_dataset",
    "merge_drift_datasets",
    "DriftSolution",
    "solve_drift_lsq",
    "assemble_cov_residuals",
    "solve_diffusion_lsq",
    "DiffusionFactorization",
    "factorize_diffusion",
    "TrainingRun",
    "InferredRom",
    "infer_rom",
    "infer_rom_from_ensembles",
    "SdeOperatorInference",
]


@dataclass(frozen=True)
class InferenceConfig:
    """Tuning knobs of the inference pipeline.

    ``gamma1`` penalizes the linear and input blocks, ``gamma2`` the
    bilinear block (both off by default).  ``truncation_fraction`` is the
    relative eigenvalue threshold of the diffusion factorization.
    ``drop_endpoint_rows`` removes the two endpoint columns from the
    regression and the residual pool, where the one-sided first-order
    derivative stencils would pollute the otherwise second-order data.
    """

    gamma1: float = 0.0
    gamma2: float = 0.0
    truncation_fraction: float = 1e-3
    drop_endpoint_rows: bool = True
    rank_tolerance: float = None

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("regularization parameters must be nonnegative")
        if self.truncation_fraction < 0:
            raise ValueError("truncation_fraction must be nonnegative")


def khatri_rao_columns(u, e):
    """Columnwise Kronecker product: column ``i`` is ``kron(u[:, i], e[:, i])``."""
    m, cols = u.shape
    r = e.shape[0]
    if e.shape[1] != cols:
        raise ValueError("operands must have the same number of columns")
    return np.einsum("is,js->ijs", u, e).reshape(m * r, cols)


@dataclass(frozen=True)
class DriftDataset:
    """Regression data ``(D, R)`` for the drift fit.

    Rows of ``data_matrix`` are stacked as ``[E; U; U (x) E]`` with block
    sizes ``r``, ``m``, ``m r``; ``rhs`` holds the corresponding
    time-derivative estimates.  Construction verifies the Khatri-Rao block
    against its defining Kronecker products.
    """

    data_matrix: np.ndarray  # (r + m + mr, cols)
    rhs: np.ndarray  # (r, cols)
    reduced_dim: int
    input_dim: int
    condition_number: float = field(default=np.nan)

    def __post_init__(self):
        r, m = self.reduced_dim, self.input_dim
        d = np.asarray(self.data_matrix, dtype=float)
        rhs = np.asarray(self.rhs, dtype=float)
        if d.shape[0] != r + m + m * r:
            raise ValueError(
                f"data matrix must have {r + m + m * r} rows, got {d.shape[0]}"
            )
        if rhs.shape != (r, d.shape[1]):
            raise ValueError(f"rhs must have shape {(r, d.shape[1])}, got {rhs.shape}")
        expected = khatri_rao_columns(d[r : r + m], d[:r])
        if not np.array_equal(expected, d[r + m :]):
            if not np.allclose(expected, d[r + m :], rtol=1e-12, atol=1e-300):
                raise ValueError("bilinear block is not the columnwise Kronecker product")
        if np.isnan(self.condition_number):
            object.__setattr__(self, "condition_number", _condition_number(d))
        object.__setattr__(self, "data_matrix", d)
        object.__setattr__(self, "rhs", rhs)

    @property
    def num_columns(self):
        return self.data_matrix.shape[1]


def _condition_number(d):
    sv = np.linalg.svd(d, compute_uv=False)
    if sv.size == 0 or sv[-1] == 0.0:
        return np.inf
    return float(sv[0] / sv[-1])


def assemble_drift_dataset(means, control, grid, config=InferenceConfig()):
    """Build the drift regression data from one run's mean trajectory.

    ``means`` has shape ``(s+1, r)``.  Derivatives come from the central
    finite-difference scheme; endpoint columns are dropped when configured.
    """
    means = np.asarray(means, dtype=float)
    if means.shape[0] != grid.step_count + 1:
        raise ValueError("means length must match the grid")
    if means.shape[0] < 3:
        raise ValueError("need at least three observation times for the derivative stencil")
    e = means.T
    u = control.on_grid(grid.times)
    deriv = finite_difference_derivative(means, grid.step_size).values.T
    data = np.vstack([e, u, khatri_rao_columns(u, e)])
    if config.drop_endpoint_rows:
        data = data[:, 1:-1]
        deriv = deriv[:, 1:-1]
    dataset = DriftDataset(
        data_matrix=data,
        rhs=deriv,
        reduced_dim=e.shape[0],
        input_dim=u.shape[0],
    )
    if not np.any(u):
        warnings.warn(
            "zero control: input and bilinear rows vanish, drift data is rank "
            "deficient by construction",
            stacklevel=2,
        )
    return dataset


def merge_drift_datasets(datasets):
    """Column-concatenate per-run datasets into one joint regression."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    first = datasets[0]
    for ds in datasets[1:]:
        if (ds.reduced_dim, ds.input_dim) != (first.reduced_dim, first.input_dim):
            raise ValueError("datasets have inconsistent block sizes")
    return DriftDataset(
        data_matrix=np.concatenate([ds.data_matrix for ds in datasets], axis=1),
        rhs=np.concatenate([ds.rhs for ds in datasets], axis=1),
        reduced_dim=first.reduced_dim,
        input_dim=first.input_dim,
    )


@dataclass(frozen=True)
class DriftSolution:
    drift_linear: np.ndarray
    drift_input: np.ndarray
    drift_bilinear: tuple
    residual_norm: float
    rank: int
    rank_deficient: bool


def solve_drift_lsq(dataset, config=InferenceConfig()):
    """Solve the (optionally Tikhonov-regularized) drift least squares.

    The penalized problem is solved through an orthogonal decomposition of
    the row-augmented system ``[D^T; Gamma^{1/2}]``; rank-deficient data
    yields the minimum-norm solution and a flag.
    """
    r, m = dataset.reduced_dim, dataset.input_dim
    p = r + m + m * r
    a = dataset.data_matrix.T
    b = dataset.rhs.T
    if config.gamma1 > 0 or config.gamma2 > 0:
        penalties = np.concatenate(
            [np.full(r + m, np.sqrt(config.gamma1)), np.full(m * r, np.sqrt(config.gamma2))]
        )
        a = np.vstack([a, np.diag(penalties)])
        b = np.vstack([b, np.zeros((p, r))])
    cond = config.rank_tolerance if config.rank_tolerance is not None else None
    solution, _, rank, _ = lstsq(a, b, cond=cond, lapack_driver="gelsd")
    operators = solution.T
    rank_deficient = rank < p
    if rank_deficient:
        warnings.warn(
            f"drift data matrix is rank deficient (rank {rank} < {p}); "
            "minimum-norm solution returned",
            stacklevel=2,
        )
    residual = float(
        np.linalg.norm(operators @ dataset.data_matrix - dataset.rhs)
    )
    return DriftSolution(
        drift_linear=operators[:, :r],
        drift_input=operators[:, r : r + m],
        drift_bilinear=tuple(
            operators[:, r + m + i * r : r + m + (i + 1) * r] for i in range(m)
        ),
        residual_norm=residual,
        rank=int(rank),
        rank_deficient=rank_deficient,
    )


def _drift_state_matrix(drift_linear, drift_bilinear, u_value):
    psi = drift_linear.copy()
    for n_i, u_i in zip(drift_bilinear, np.asarray(u_value, float).reshape(-1)):
        if u_i != 0.0:
            psi += u_i * n_i
    return psi


def assemble_cov_residuals(
    covariances,
    cov_derivatives,
    drift_linear,
    drift_bilinear,
    control,
    grid,
    drop_endpoints=True,
):
    """Residuals of the homogeneous covariance dynamics at each time.

    ``S_i = dC_i - (Psi_i C_i + C_i Psi_i^T)`` with
    ``Psi_i = A + sum_k N_k u_k(t_i)`` built from the inferred drift.  The
    retained index set matches the drift dataset (endpoints dropped
    consistently when configured).
    """
    covs = np.asarray(covariances, dtype=float)
    dcovs = np.asarray(cov_derivatives, dtype=float)
    if covs.shape != dcovs.shape:
        raise ValueError("covariances and derivatives must have matching shapes")
    if covs.shape[0] != grid.step_count + 1:
        raise ValueError("covariance sequence length must match the grid")
    indices = range(1, grid.step_count) if drop_endpoints else range(grid.step_count + 1)
    times = grid.times
    residuals = np.empty((len(indices), covs.shape[1], covs.shape[2]))
    for out_idx, i in enumerate(indices):
        psi = _drift_state_matrix(drift_linear, drift_bilinear, control(times[i]))
        pc = psi @ covs[i]
        residuals[out_idx] = dcovs[i] - (pc + pc.T)
    return residuals


def solve_diffusion_lsq(residuals):
    """Closed-form minimizer of ``sum_i ||S_i - H||_F^2``: the entrywise mean."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim != 3 or residuals.shape[0] == 0:
        raise ValueError("need at least one residual matrix")
    return residuals.mean(axis=0)


@dataclass(frozen=True)
class DiffusionFactorization:
    """Truncated eigenfactorization of the estimated noise covariance."""

    diffusion: np.ndarray  # (r, noise_dim)
    noise_correlation: np.ndarray  # identity of size noise_dim
    noise_dim: int
    eigenvalues: np.ndarray  # full descending spectrum of the symmetrized input
    truncated_eigenvalues: np.ndarray

    @property
    def deterministic(self):
        return self.noise_dim == 0


def factorize_diffusion(noise_covariance, truncation_fraction=1e-3):
    """Factor an estimated ``M K M^T`` into ``M_hat I M_hat^T``.

    The input is symmetrized, eigendecomposed, and eigenvalues at or below
    ``truncation_fraction`` times the largest are discarded (negative ones
    always are).  Column ``j`` of the diffusion is ``sqrt(lambda_j) v_j``.
    A nonpositive spectrum yields a deterministic model (no noise), which
    is legitimate for noise-free training data.
    """
    h = np.asarray(noise_covariance, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("noise covariance estimate must be square")
    sym = (h + h.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    r = h.shape[0]
    if eigvals.size == 0 or eigvals[0] <= 0.0:
        warnings.warn(
            "noise covariance estimate has no positive eigenvalues; "
            "returning a deterministic model",
            stacklevel=2,
        )
        keep = np.zeros(0, dtype=int)
    else:
        keep = np.flatnonzero(eigvals > truncation_fraction * eigvals[0])
    d_r = keep.size
    vectors = eigvecs[:, keep]
    for j in range(d_r):
        idx = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[idx, j] < 0:
            vectors[:, j] = -vectors[:, j]
    diffusion = vectors * np.sqrt(eigvals[keep])
    dropped = np.delete(eigvals, keep)
    return DiffusionFactorization(
        diffusion=diffusion,
        noise_correlation=np.eye(d_r),
        noise_dim=d_r,
        eigenvalues=eigvals,
        truncated_eigenvalues=dropped,
    )


@dataclass(frozen=True)
class TrainingRun:
    """Reduced moment data of one (initial condition, control) pair."""

    moments: object  # MomentTrajectory in reduced coordinates
    control: object  # ControlSignal


@dataclass(frozen=True)
class InferredRom:
    """Reduced coefficients identified from data, plus fit diagnostics."""

    drift_linear: np.ndarray
    drift_input: np.ndarray
    drift_bilinear: tuple
    diffusion: np.ndarray
    noise_dim: int
    diagnostics: dict

    @property
    def reduced_dim(self):
        return self.drift_linear.shape[0]

    @property
    def noise_correlation(self):
        return np.eye(self.noise_dim)

    def to_system(self, initial_mean=None, initial_covariance=None, label="inferred-rom"):
        """Materialize as a simulatable system with given initial law."""
        r = self.reduced_dim
        return BilinearSdeSystem(
            drift_linear=self.drift_linear,
            drift_input=self.drift_input,
            drift_bilinear=self.drift_bilinear,
            diffusion=self.diffusion if self.noise_dim else np.zeros((r, 0)),
            noise_correlation=self.noise_correlation,
            initial_mean=np.zeros(r) if initial_mean is None else initial_mean,
            initial_covariance=(
                np.zeros((r, r)) if initial_covariance is None else initial_covariance
            ),
            label=label,
        )


def infer_rom(runs, grid, config=InferenceConfig()):
    """Identify a reduced SDE from already-reduced training moments.

    Executes the inference pipeline over any number of training runs:
    assemble each run's drift data, solve the joint drift least squares,
    build each run's covariance residuals with the inferred drift, average
    them into the noise covariance estimate, and factor it.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one training run")
    dims = {run.moments.dim for run in runs}
    if len(dims) != 1:
        raise ValueError(f"training runs have inconsistent reduced dimensions: {dims}")
    datasets = [
        assemble_drift_dataset(run.moments.means, run.control, grid, config)
        for run in runs
    ]
    merged = merge_drift_datasets(datasets)
    drift = solve_drift_lsq(merged, config)
    residual_blocks = []
    for run in runs:
        dcovs = finite_difference_derivative(
            run.moments.covariances, grid.step_size
        ).values
        residual_blocks.append(
            assemble_cov_residuals(
                run.moments.covariances,
                dcovs,
                drift.drift_linear,
                drift.drift_bilinear,
                run.control,
                grid,
                drop_endpoints=config.drop_endpoint_rows,
            )
        )
    residuals = np.concatenate(residual_blocks, axis=0)
    noise_cov = solve_diffusion_lsq(residuals)
    factorization = factorize_diffusion(noise_cov, config.truncation_fraction)
    diffusion_residual = float(
        np.sqrt(np.mean([np.linalg.norm(s - noise_cov) ** 2 for s in residuals]))
    )
    diagnostics = {
        "drift_residual_norm": drift.residual_norm,
        "drift_rank": drift.rank,
        "drift_rank_deficient": drift.rank_deficient,
        "condition_number": merged.condition_number,
        "diffusion_residual_rms": diffusion_residual,
        "truncated_eigenvalues": factorization.truncated_eigenvalues,
        "eigenvalues": factorization.eigenvalues,
        "gamma1": config.gamma1,
        "gamma2": config.gamma2,
        "drop_endpoint_rows": config.drop_endpoint_rows,
        "num_runs": len(runs),
        "num_columns": merged.num_columns,
    }
    return InferredRom(
        drift_linear=drift.drift_linear,
        drift_input=drift.drift_input,
        drift_bilinear=drift.drift_bilinear,
        diffusion=factorization.diffusion,
        noise_dim=factorization.noise_dim,
        diagnostics=diagnostics,
    )


def infer_rom_from_ensembles(ensembles, controls, basis, config=InferenceConfig()):
    """Convenience wrapper: project ensembles, estimate moments, then infer."""
    from .moments import empirical_moments

    ensembles = list(ensembles)
    controls = list(controls)
    if len(ensembles) != len(controls):
        raise ValueError("need one control per ensemble")
    if not ensembles:
        raise ValueError("need at least one ensemble")
    grid = ensembles[0].grid
    v = getattr(basis, "matrix", basis)
    runs = [
        TrainingRun(moments=empirical_moments(ens, v), control=ctrl)
        for ens, ctrl in zip(ensembles, controls)
    ]
    return infer_rom(runs, grid, config)


class SdeOperatorInference(BaseEstimator):
    """Estimator facade over :func:`infer_rom` with scikit-learn conventions.

    Parameters mirror :class:`InferenceConfig`; ``fit`` accepts a sequence
    of :class:`TrainingRun` and exposes the identified model as ``rom_``.
    """

    def __init__(
        self,
        gamma1=0.0,
        gamma2=0.0,
        truncation_fraction=1e-3,
        drop_endpoint_rows=True,
        rank_tolerance=None,
    ):
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.truncation_fraction = truncation_fraction
        self.drop_endpoint_rows = drop_endpoint_rows
        self.rank_tolerance = rank_tolerance

    def _config(self):
        return InferenceConfig(
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            truncation_fraction=self.truncation_fraction,
            drop_endpoint_rows=self.drop_endpoint_rows,
            rank_tolerance=self.rank_tolerance,
        )

    def fit(self, runs, grid=None, y=None):
        runs = list(runs)
        if grid is None:
            grid = runs[0].moments.grid
        self.rom_ = infer_rom(runs, grid, self._config())
        return self

    def predict_moments(self, control, grid, initial_mean=None, initial_covariance=None, substeps=10):
        """Moment trajectory of the fitted model under a given control."""
        from .moments import exact_moments

        if not hasattr(self, "rom_"):
            raise RuntimeError("SdeOperatorInference instance is not fitted yet")
        system = self.rom_.to_system(initial_mean, initial_covariance)
        return exact_moments(system, control, grid, substeps=substeps)
