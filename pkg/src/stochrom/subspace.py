"""Snapshot matrices and truncated orthonormal bases for model reduction.

Bases are the leading left singular vectors of either the state snapshot
matrix (all sampled states side by side) or the moment snapshot matrix
(mean columns followed by covariance blocks).  For wide matrices that do
not fit a dense SVD, the mathematically equivalent Gram route
(eigendecomposition of ``X X^T``) is available and can be fed from
streamed raw sums.  Span-containment checks verify that moment-derived
subspaces lie inside the state-snapshot subspace.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import svd
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ORTHONORMALITY_TOL, check_orthonormal

__all__ = [
    "ReductionBasis",
    "build_state_snapshot_matrix",
    "build_moment_snapshot_matrix",
    "moment_column_weights",
    "compute_basis",
    "basis_from_gram",
    "truncate_to_rank",
    "SpanContainmentReport",
    "check_span_containment",
    "PodBasis",
]

#: Relative threshold on singular values that counts as "numerically nonzero".
RANK_TOL = 1e-10


@dataclass(frozen=True)
class ReductionBasis:
    """Orthonormal basis ``V`` (columns) plus the full singular-value decay."""

    matrix: np.ndarray  # (n, r)
    singular_values: np.ndarray  # full descending sequence of the source
    source: str = "state-snapshots"

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        sv = np.asarray(self.singular_values, dtype=float).reshape(-1)
        if mat.ndim != 2:
            raise ValueError("basis matrix must be two-dimensional")
        check_orthonormal(mat, "basis", ORTHONORMALITY_TOL)
        if np.any(sv < 0):
            raise ValueError("singular values must be nonnegative")
        if np.any(np.diff(sv) > 1e-9 * max(1.0, sv[0] if sv.size else 1.0)):
            raise ValueError("singular values must be descending")
        mat = mat.copy()
        mat.setflags(write=False)
        sv = sv.copy()
        sv.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "singular_values", sv)

    @property
    def dim(self):
        return self.matrix.shape[1]

    @property
    def state_dim(self):
        return self.matrix.shape[0]

    def numerical_rank(self, rank_tol=RANK_TOL):
        sv = self.singular_values
        if sv.size == 0 or sv[0] == 0.0:
            return 0
        return int(np.count_nonzero(sv > rank_tol * sv[0]))

    def truncated(self, r):
        """First ``r`` columns as a new basis."""
        if not 1 <= r <= self.dim:
            raise ValueError(f"r must be in [1, {self.dim}]")
        return ReductionBasis(self.matrix[:, :r], self.singular_values, self.source)


def build_state_snapshot_matrix(ensembles):
    """Arrange all sampled states as columns, ordered by (ensemble, time, path).

    Column permutations do not affect the left singular vectors, but the
    ordering is fixed and documented for reproducibility.
    """
    blocks = []
    state_dim = None
    for ens in ensembles:
        if state_dim is None:
            state_dim = ens.state_dim
        elif ens.state_dim != state_dim:
            raise ValueError("ensembles have inconsistent state dimensions")
        # (L, s+1, n) -> columns grouped by time, paths in order inside a group
        blocks.append(ens.states.transpose(1, 0, 2).reshape(-1, state_dim).T)
    if not blocks:
        raise ValueError("need at least one ensemble")
    return np.concatenate(blocks, axis=1)


def build_moment_snapshot_matrix(trajectories):
    """Stack mean columns then covariance blocks for each trajectory."""
    blocks = []
    dim = None
    for traj in trajectories:
        if dim is None:
            dim = traj.dim
        elif traj.dim != dim:
            raise ValueError("trajectories have inconsistent dimensions")
        blocks.append(traj.means.T)
        blocks.append(traj.covariances.transpose(1, 0, 2).reshape(dim, -1))
    if not blocks:
        raise ValueError("need at least one trajectory")
    return np.concatenate(blocks, axis=1)


def moment_column_weights(dim, step_count, mean_scale=1.0, covariance_scale=1.0):
    """Per-column weights scaling the mean and covariance blocks of one trajectory."""
    return np.concatenate(
        [
            np.full(step_count + 1, float(mean_scale)),
            np.full((step_count + 1) * dim, float(covariance_scale)),
        ]
    )


def _fix_column_signs(v):
    """Deterministic sign convention: largest-magnitude entry positive.

    Ties break to the lowest row index (``argmax`` returns the first
    maximum).
    """
    v = v.copy()
    for j in range(v.shape[1]):
        idx = int(np.argmax(np.abs(v[:, j])))
        if v[idx, j] < 0:
            v[:, j] = -v[:, j]
    return v


def compute_basis(matrix, r, column_weights=None, source="state-snapshots", rank_tol=RANK_TOL):
    """Leading ``r`` left singular vectors of a snapshot matrix.

    Optional ``column_weights`` rescale columns before the decomposition
    (e.g. to balance mean against covariance blocks).  The full singular
    value sequence is kept for energy diagnostics.  Requesting ``r``
    beyond the numerical rank is allowed but flagged, since the trailing
    directions are arbitrary.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("snapshot matrix must be two-dimensional")
    if not 1 <= r <= min(matrix.shape):
        raise ValueError(f"r must be in [1, {min(matrix.shape)}]")
    if column_weights is not None:
        w = np.asarray(column_weights, dtype=float).reshape(-1)
        if w.size != matrix.shape[1]:
            raise ValueError("column_weights length must equal the column count")
        matrix = matrix * w
    u, sv, _ = svd(matrix, full_matrices=False)
    rank = int(np.count_nonzero(sv > rank_tol * sv[0])) if sv[0] > 0 else 0
    if r > rank:
        warnings.warn(
            f"requested {r} basis vectors but numerical rank is {rank}; "
            "trailing directions are arbitrary",
            stacklevel=2,
        )
    return ReductionBasis(
        matrix=_fix_column_signs(u[:, :r]), singular_values=sv, source=source
    )


def basis_from_gram(gram, r, source="state-snapshots", rank_tol=RANK_TOL):
    """Basis from the Gram matrix ``G = X X^T`` of an (unstored) snapshot matrix.

    Mathematically equivalent to :func:`compute_basis` for the left
    singular vectors; singular values are ``sqrt`` of the Gram
    eigenvalues (clamped at zero).  Intended for ensembles too large to
    arrange as a dense matrix, with ``G`` accumulated streaming over
    column blocks in a fixed order.
    """
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram matrix must be square")
    eigvals, eigvecs = np.linalg.eigh((gram + gram.T) / 2.0)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    sv = np.sqrt(np.clip(eigvals, 0.0, None))
    if not 1 <= r <= gram.shape[0]:
        raise ValueError(f"r must be in [1, {gram.shape[0]}]")
    rank = int(np.count_nonzero(sv > rank_tol * sv[0])) if sv[0] > 0 else 0
    if r > rank:
        warnings.warn(
            f"requested {r} basis vectors but numerical rank is {rank}; "
            "trailing directions are arbitrary",
            stacklevel=2,
        )
    return ReductionBasis(
        matrix=_fix_column_signs(eigvecs[:, :r]), singular_values=sv, source=source
    )


def truncate_to_rank(basis, rank_tol=RANK_TOL):
    """Drop basis columns whose singular values are numerically zero."""
    rank = basis.numerical_rank(rank_tol)
    if rank == 0:
        raise ValueError("basis has numerical rank zero")
    return basis.truncated(min(rank, basis.dim))


@dataclass(frozen=True)
class SpanContainmentReport:
    """Per-column residuals of inner basis vectors against an outer subspace."""

    residuals: np.ndarray
    tol: float

    @property
    def contained(self):
        return bool(np.all(self.residuals <= self.tol))

    @property
    def max_residual(self):
        return float(self.residuals.max()) if self.residuals.size else 0.0


def check_span_containment(inner, outer, tol=1e-8, rank_tol=RANK_TOL):
    """Residuals ``||(I - V V^T) v||`` of inner columns against the outer span.

    The outer basis is truncated at its numerical rank first, so that
    arbitrary directions attached to zero singular values do not fake
    containment.
    """
    if inner.state_dim != outer.state_dim:
        raise ValueError("bases must share the row dimension")
    v_out = truncate_to_rank(outer, rank_tol).matrix
    v_in = inner.matrix
    residual_vectors = v_in - v_out @ (v_out.T @ v_in)
    residuals = np.linalg.norm(residual_vectors, axis=0)
    return SpanContainmentReport(residuals=residuals, tol=float(tol))


class PodBasis(BaseEstimator, TransformerMixin):
    """Snapshot-based reduction basis with a scikit-learn style interface.

    ``fit`` consumes a snapshot matrix whose *columns* are snapshots (the
    domain convention), ``transform`` projects column vectors onto the
    basis, and ``inverse_transform`` lifts them back.

    Parameters
    ----------
    num_vectors : int
        Number of retained left singular vectors.
    column_weights : array or None
        Optional per-column scaling applied before the decomposition.
    rank_tol : float
        Relative singular-value threshold for rank warnings.
    """

    def __init__(self, num_vectors=1, column_weights=None, rank_tol=RANK_TOL):
        self.num_vectors = num_vectors
        self.column_weights = column_weights
        self.rank_tol = rank_tol

    def fit(self, snapshot_matrix, y=None):
        self.basis_ = compute_basis(
            snapshot_matrix,
            self.num_vectors,
            column_weights=self.column_weights,
            rank_tol=self.rank_tol,
        )
        return self

    def fit_from_gram(self, gram):
        """Fit from a streamed Gram matrix instead of explicit snapshots."""
        self.basis_ = basis_from_gram(gram, self.num_vectors, rank_tol=self.rank_tol)
        return self

    def _require_fitted(self):
        if not hasattr(self, "basis_"):
            raise RuntimeError("PodBasis instance is not fitted yet")

    def transform(self, states):
        """Project columns: ``V^T X``."""
        self._require_fitted()
        return self.basis_.matrix.T @ np.asarray(states, dtype=float)

    def inverse_transform(self, reduced):
        """Lift columns back: ``V Z``."""
        self._require_fitted()
        return self.basis_.matrix @ np.asarray(reduced, dtype=float)

    @property
    def singular_values_(self):
        self._require_fitted()
        return self.basis_.singular_values
