"""Input validation helpers shared across the package."""

import numpy as np

#: Frobenius-norm tolerance for orthonormality checks on basis matrices.
ORTHONORMALITY_TOL = 1e-10

#: Eigenvalue tolerance below zero for "positive semidefinite" checks.
PSD_TOL = 1e-10


def as_float_matrix(a, name, allow_empty=False):
    """Coerce ``a`` to a read-only 2-d float64 array."""
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={arr.ndim}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    arr.setflags(write=False)
    return arr


def as_float_vector(a, name):
    """Coerce ``a`` to a read-only 1-d float64 array."""
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def symmetry_defect(a):
    """Frobenius norm of the antisymmetric part of ``a``."""
    return float(np.linalg.norm(a - a.T))


def min_symmetric_eigenvalue(a):
    """Smallest eigenvalue of the symmetrized matrix ``(a + a.T) / 2``."""
    if a.shape[0] == 0:
        return 0.0
    return float(np.linalg.eigvalsh((a + a.T) / 2.0)[0])


def is_psd(a, tol=PSD_TOL):
    """Whether ``a`` is symmetric positive semidefinite within ``tol``."""
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if symmetry_defect(a) > tol * scale:
        return False
    return min_symmetric_eigenvalue(a) >= -tol * scale


def orthonormality_defect(v):
    """Frobenius norm of ``V.T V - I``."""
    r = v.shape[1]
    return float(np.linalg.norm(v.T @ v - np.eye(r)))


def check_orthonormal(v, name="basis", tol=ORTHONORMALITY_TOL):
    defect = orthonormality_defect(v)
    if defect > tol:
        raise ValueError(
            f"{name} columns are not orthonormal: ||V.T V - I||_F = {defect:.3e} > {tol:.1e}"
        )


def require_all_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains NaN or Inf entries")
