"""Ensemble sampling of bilinear SDEs with a drift-implicit Euler-Maruyama scheme.

Time stepping solves, with ``Psi(t) = A + sum_i N_i u_i(t)``,

    (I - h Psi(t_{k+1})) x_{k+1} = x_k + h B u(t_{k+1}) + M dW_k,

i.e. implicit in the drift (coefficients evaluated at the new time) and
explicit in the noise increment.  Paths are driven by per-path random
streams derived from ``(base_seed, run id, path index)``, so path ``j`` is
bit-identical in every ensemble that contains it, regardless of ensemble
size or scheduling (common random numbers).

Internally paths are simulated in fixed-width blocks padded with zero
columns.  Linear-algebra kernels are only guaranteed to be columnwise
bit-reproducible when the operand shapes are fixed, so the padding is what
makes the common-random-numbers contract hold exactly.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ._validation import PSD_TOL, require_all_finite

__all__ = [
    "SeedPolicy",
    "SnapshotEnsemble",
    "sample_wiener_increments",
    "simulate_path",
    "sample_ensemble",
    "iter_state_batches",
]

#: Fixed physical width of simulation blocks.  Do not make this
#: configurable: results are bit-stable only for a fixed width.
_BLOCK = 256


@dataclass(frozen=True)
class SeedPolicy:
    """Derives independent random streams from ``(base_seed, run, path)``.

    Distinct ``(run_id, path_index)`` pairs map to distinct streams, and a
    stream depends on nothing else -- not on the ensemble size and not on
    scheduling.  ``run_id`` is any string (or int) labelling one
    (initial condition, control) data-generation pair.
    """

    base_seed: int

    def run_key(self, run_id):
        """Stable 64-bit key for a run label."""
        digest = hashlib.blake2b(str(run_id).encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def stream(self, run_id, path_index):
        """Random generator for one path of one run."""
        if path_index < 0:
            raise ValueError("path_index must be nonnegative")
        seq = np.random.SeedSequence(
            entropy=self.base_seed, spawn_key=(self.run_key(run_id), int(path_index))
        )
        return np.random.default_rng(seq)


@dataclass(frozen=True)
class SnapshotEnsemble:
    """Sampled state trajectories: ``states[j, i]`` is path ``j`` at time ``t_i``."""

    states: np.ndarray  # (L, s+1, n)
    grid: object
    input_id: str
    seed_info: dict

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 3:
            raise ValueError("states must have shape (paths, times, state_dim)")
        if states.shape[1] != self.grid.step_count + 1:
            raise ValueError(
                f"states have {states.shape[1]} time slices, grid has {self.grid.step_count + 1}"
            )
        require_all_finite(states, "ensemble states")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def num_paths(self):
        return self.states.shape[0]

    @property
    def state_dim(self):
        return self.states.shape[2]


def _psd_factor(matrix, name):
    """A factor ``G`` with ``G G^T = matrix`` for a PSD matrix.

    Uses a symmetric eigendecomposition and clamps slightly negative
    eigenvalues at zero, so matrices that are PSD only up to rounding are
    accepted.  Clearly indefinite input is rejected.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return np.zeros(matrix.shape)
    sym_defect = np.abs(matrix - matrix.T).max()
    scale = max(1.0, np.abs(matrix).max())
    if sym_defect > PSD_TOL * scale:
        raise np.linalg.LinAlgError(f"{name} is not symmetric")
    eigvals, eigvecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if eigvals[0] < -PSD_TOL * max(1.0, eigvals[-1], 0.0):
        raise np.linalg.LinAlgError(
            f"{name} is indefinite (min eigenvalue {eigvals[0]:.3e}); cannot factor"
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_wiener_increments(noise_dim, correlation, grid, rng):
    """Draw correlated Wiener increments, one row per time step.

    Each row is ``N(0, h K)``, generated as ``sqrt(h) * G z`` with
    ``G G^T = K`` and i.i.d. standard normal ``z``.  Returns shape
    ``(step_count, noise_dim)``.
    """
    d = int(noise_dim)
    s = grid.step_count
    if d == 0:
        return np.zeros((s, 0))
    g = _psd_factor(np.asarray(correlation, dtype=float), "correlation matrix")
    z = rng.standard_normal((s, d))
    return np.sqrt(grid.step_size) * (z @ g.T)


class _StepSolver:
    """Per-step LU factorizations of ``I - h Psi(t_{k+1})``, shared by all paths.

    When ``Psi`` does not depend on time (no bilinear terms, or a constant
    control) a single factorization is reused for every step; this is
    bit-identical to factoring per step because the factored matrix is
    identical.
    """

    def __init__(self, system, control, grid, reuse_constant=True):
        n = system.state_dim
        h = grid.step_size
        eye = np.eye(n)
        times = grid.times
        has_bilinear = any(n_i.any() for n_i in system.drift_bilinear)
        constant = reuse_constant and (control.is_constant or not has_bilinear)
        self._factors = []
        cached = None
        for k in range(grid.step_count):
            if constant and cached is not None:
                self._factors.append(cached)
                continue
            u_next = control(times[k + 1])
            step_matrix = eye - h * system.drift_state_matrix(u_next)
            lu, piv = lu_factor(step_matrix, check_finite=False)
            if np.any(np.diag(lu) == 0.0):
                raise np.linalg.LinAlgError(
                    f"singular implicit step matrix at step {k + 1}"
                )
            cached = (lu, piv)
            self._factors.append(cached)

    def solve(self, k, rhs):
        lu, piv = self._factors[k]
        return lu_solve((lu, piv), rhs, check_finite=False)


def _forcing_terms(system, control, grid):
    """``h * B u(t_{k+1})`` for each step, shape ``(s, n)``."""
    times = grid.times
    u_grid = control.on_grid(times[1:])  # (m, s)
    return grid.step_size * (system.drift_input @ u_grid).T


def _simulate_block(system, solver, forcing, x0_block, dw_block, width):
    """Advance a zero-padded block of paths; returns ``(s+1, n, _BLOCK)``.

    ``x0_block`` is ``(n, _BLOCK)`` and ``dw_block`` is ``(s, d, _BLOCK)``;
    only the first ``width`` columns are real paths.
    """
    steps = forcing.shape[0]
    n = system.state_dim
    states = np.empty((steps + 1, n, x0_block.shape[1]))
    states[0] = x0_block
    diffusion = system.diffusion
    has_noise = diffusion.size > 0
    x = x0_block
    for k in range(steps):
        rhs = x + forcing[k][:, None]
        if has_noise:
            rhs = rhs + diffusion @ dw_block[k]
        x = solver.solve(k, rhs)
        if not np.all(np.isfinite(x[:, :width])):
            bad = int(np.argmax(~np.isfinite(x[:, :width]).all(axis=0)))
            raise FloatingPointError(
                f"non-finite state at step {k + 1} (path offset {bad}); "
                "simulation aborted"
            )
        states[k + 1] = x
    return states


def _draw_initial_and_increments(system, grid, rng, init_factor):
    """Per-path draws in a fixed order: initial state first, then increments."""
    if init_factor is None:
        x0 = system.initial_mean.copy()
    else:
        z0 = rng.standard_normal(system.state_dim)
        x0 = system.initial_mean + init_factor @ z0
    dw = sample_wiener_increments(
        system.noise_dim, system.noise_correlation, grid, rng
    )
    return x0, dw


def simulate_path(system, control, grid, increments, initial_state=None):
    """Integrate a single path with given noise increments.

    ``increments`` must have shape ``(step_count, noise_dim)``;
    ``initial_state`` defaults to the system's initial mean.  Returns the
    trajectory with shape ``(step_count + 1, state_dim)``.
    """
    increments = np.asarray(increments, dtype=float)
    expected = (grid.step_count, system.noise_dim)
    if increments.shape != expected:
        raise ValueError(f"increments must have shape {expected}, got {increments.shape}")
    x0 = system.initial_mean if initial_state is None else np.asarray(initial_state, float)
    solver = _StepSolver(system, control, grid)
    forcing = _forcing_terms(system, control, grid)
    n = system.state_dim
    x0_block = np.zeros((n, _BLOCK))
    x0_block[:, 0] = x0
    dw_block = np.zeros((grid.step_count, system.noise_dim, _BLOCK))
    dw_block[:, :, 0] = increments
    states = _simulate_block(system, solver, forcing, x0_block, dw_block, width=1)
    return states[:, :, 0].copy()


def iter_state_batches(system, control, grid, num_paths, policy, run_id):
    """Yield ``(start_index, states)`` blocks covering paths ``0..num_paths-1``.

    ``states`` has shape ``(width, s+1, n)`` with paths in index order.
    Streaming consumers (moment accumulation, Gram accumulation) use this
    to avoid materializing large ensembles.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    solver = _StepSolver(system, control, grid)
    forcing = _forcing_terms(system, control, grid)
    n = system.state_dim
    d = system.noise_dim
    s = grid.step_count
    init_factor = None
    if not system.deterministic_initial_condition:
        init_factor = _psd_factor(system.initial_covariance, "initial_covariance")
    for start in range(0, num_paths, _BLOCK):
        width = min(_BLOCK, num_paths - start)
        x0_block = np.zeros((n, _BLOCK))
        dw_block = np.zeros((s, d, _BLOCK))
        for j in range(width):
            rng = policy.stream(run_id, start + j)
            x0, dw = _draw_initial_and_increments(system, grid, rng, init_factor)
            x0_block[:, j] = x0
            dw_block[:, :, j] = dw
        states = _simulate_block(system, solver, forcing, x0_block, dw_block, width)
        yield start, np.ascontiguousarray(states[:, :, :width].transpose(2, 0, 1))


def sample_ensemble(system, control, grid, num_paths, policy, run_id):
    """Sample ``num_paths`` independent paths into a :class:`SnapshotEnsemble`.

    Deterministic initial conditions reuse the initial mean; Gaussian ones
    are drawn from the path's own stream before its noise increments.
    Repeated calls with identical arguments are bitwise reproducible, and
    path ``j`` is identical for any ensemble size ``> j``.
    """
    blocks = [
        states for _, states in iter_state_batches(
            system, control, grid, num_paths, policy, run_id
        )
    ]
    states = np.concatenate(blocks, axis=0) if len(blocks) > 1 else blocks[0]
    return SnapshotEnsemble(
        states=states,
        grid=grid,
        input_id=control.describe(),
        seed_info={"base_seed": policy.base_seed, "run_id": str(run_id)},
    )
