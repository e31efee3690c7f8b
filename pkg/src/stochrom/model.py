"""Bilinear SDE systems with additive Gaussian noise.

The central object is :class:`BilinearSdeSystem`, describing

    dX(t) = [A X(t) + B u(t) + sum_i N_i X(t) u_i(t)] dt + M dW(t),

where ``W`` is a Wiener process with correlation matrix ``K`` and the
initial state is deterministic or Gaussian.  The module also provides
time grids, closed-form control signals, a structural validator, and the
Galerkin projection onto a reduced basis.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    ORTHONORMALITY_TOL,
    PSD_TOL,
    as_float_matrix,
    as_float_vector,
    check_orthonormal,
    is_psd,
    symmetry_defect,
)

__all__ = [
    "TimeGrid",
    "ControlSignal",
    "ZeroControl",
    "ConstantControl",
    "CosineControl",
    "parse_control",
    "BilinearSdeSystem",
    "ValidationReport",
    "validate_system",
    "galerkin_project",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform observation grid ``t_i = i * step_size`` for ``i = 0..step_count``."""

    step_count: int
    step_size: float

    def __post_init__(self):
        if self.step_count < 1:
            raise ValueError("step_count must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")

    @property
    def horizon(self):
        """End time ``T = step_count * step_size``."""
        return self.step_count * self.step_size

    @property
    def times(self):
        """All observation times, shape ``(step_count + 1,)``."""
        return np.arange(self.step_count + 1) * self.step_size

    def __len__(self):
        return self.step_count + 1


class ControlSignal:
    """Deterministic control ``u : [0, T] -> R^m``, evaluable at any time.

    Subclasses implement ``__call__`` returning an ``(m,)`` vector and must
    be side-effect free, so evaluation commutes with caching and the same
    object can be shared across concurrent workers.
    """

    input_dim = 1
    #: True when ``u(t)`` does not depend on ``t`` (lets solvers reuse a
    #: single factorization of the implicit step matrix).
    is_constant = False

    def __call__(self, t):
        raise NotImplementedError

    def describe(self):
        """Stable text label used for provenance and serialization."""
        raise NotImplementedError

    def on_grid(self, times):
        """Evaluate on a time array, returning shape ``(m, len(times))``."""
        return np.column_stack([self(float(t)) for t in np.asarray(times).reshape(-1)])


class ZeroControl(ControlSignal):
    """The zero control ``u(t) = 0``."""

    is_constant = True

    def __init__(self, input_dim=1):
        self.input_dim = int(input_dim)

    def __call__(self, t):
        return np.zeros(self.input_dim)

    def describe(self):
        return f"zero:m={self.input_dim}"


class ConstantControl(ControlSignal):
    """Constant control ``u(t) = c``."""

    is_constant = True

    def __init__(self, value):
        self.value = as_float_vector(value, "value")
        self.input_dim = self.value.size

    def __call__(self, t):
        return self.value.copy()

    def describe(self):
        vals = ",".join(repr(float(v)) for v in self.value)
        return f"constant:{vals}"


class CosineControl(ControlSignal):
    """Scalar control ``u(t) = amplitude * cos(multiplier * pi * t / horizon)``."""

    def __init__(self, amplitude, multiplier, horizon):
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.amplitude = float(amplitude)
        self.multiplier = float(multiplier)
        self.horizon = float(horizon)

    def __call__(self, t):
        phase = self.multiplier * np.pi * t / self.horizon
        return np.array([self.amplitude * np.cos(phase)])

    def describe(self):
        return f"cosine:a={self.amplitude!r},q={self.multiplier!r},T={self.horizon!r}"


def parse_control(label, horizon=None):
    """Rebuild a control from a :meth:`ControlSignal.describe` label."""
    kind, _, rest = label.partition(":")
    if kind == "zero":
        m = int(rest.split("=", 1)[1]) if rest else 1
        return ZeroControl(m)
    if kind == "constant":
        return ConstantControl([float(v) for v in rest.split(",")])
    if kind == "cosine":
        params = dict(item.split("=", 1) for item in rest.split(","))
        t_end = float(params.get("T", horizon if horizon is not None else np.nan))
        return CosineControl(float(params["a"]), float(params["q"]), t_end)
    raise ValueError(f"unknown control label {label!r}")


@dataclass(frozen=True)
class BilinearSdeSystem:
    """Coefficients and initial law of a bilinear SDE with additive noise.

    Arrays are copied and frozen on construction; a zero
    ``initial_covariance`` encodes a deterministic initial condition.
    Construction does not reject inconsistent data -- use
    :func:`validate_system` for a defect report.
    """

    drift_linear: np.ndarray
    drift_input: np.ndarray
    drift_bilinear: tuple
    diffusion: np.ndarray
    noise_correlation: np.ndarray
    initial_mean: np.ndarray
    initial_covariance: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        coerce = object.__setattr__
        coerce(self, "drift_linear", as_float_matrix(self.drift_linear, "drift_linear"))
        coerce(self, "drift_input", as_float_matrix(self.drift_input, "drift_input"))
        coerce(
            self,
            "drift_bilinear",
            tuple(
                as_float_matrix(n_i, f"drift_bilinear[{i}]")
                for i, n_i in enumerate(self.drift_bilinear)
            ),
        )
        coerce(self, "diffusion", as_float_matrix(self.diffusion, "diffusion", allow_empty=True))
        coerce(
            self,
            "noise_correlation",
            as_float_matrix(self.noise_correlation, "noise_correlation", allow_empty=True),
        )
        coerce(self, "initial_mean", as_float_vector(self.initial_mean, "initial_mean"))
        coerce(
            self,
            "initial_covariance",
            as_float_matrix(self.initial_covariance, "initial_covariance"),
        )

    @property
    def state_dim(self):
        return self.drift_linear.shape[0]

    @property
    def input_dim(self):
        return self.drift_input.shape[1]

    @property
    def noise_dim(self):
        return self.diffusion.shape[1] if self.diffusion.size else self.noise_correlation.shape[0]

    @property
    def deterministic_initial_condition(self):
        """True when the initial covariance is exactly zero."""
        return not np.any(self.initial_covariance)

    def drift_state_matrix(self, u_value):
        """``A + sum_i N_i u_i`` for a fixed control value ``u_value``."""
        psi = self.drift_linear.copy()
        u = np.asarray(u_value, dtype=float).reshape(-1)
        for n_i, u_i in zip(self.drift_bilinear, u):
            if u_i != 0.0:
                psi += u_i * n_i
        return psi

    def noise_covariance(self):
        """``M K M^T``, the constant inhomogeneity of the covariance dynamics."""
        if self.diffusion.size == 0:
            return np.zeros((self.state_dim, self.state_dim))
        return self.diffusion @ self.noise_correlation @ self.diffusion.T


@dataclass(frozen=True)
class ValidationReport:
    defects: tuple

    @property
    def is_valid(self):
        return not self.defects


def validate_system(system):
    """Check dimensional consistency and PSD requirements of a system.

    Returns a :class:`ValidationReport`; an empty defect list means the
    system is structurally sound.  This never raises: it is a reporting
    operation so that deliberately broken systems can be examined.
    """
    defects = []
    n = system.state_dim
    a = system.drift_linear
    if a.shape != (n, n):
        defects.append(f"drift_linear must be square, got {a.shape}")
    if system.drift_input.shape[0] != n:
        defects.append(
            f"input dimension mismatch: drift_input has {system.drift_input.shape[0]} rows, "
            f"state dimension is {n}"
        )
    m = system.input_dim
    if len(system.drift_bilinear) != m:
        defects.append(
            f"input dimension mismatch: {len(system.drift_bilinear)} bilinear terms "
            f"for input dimension {m}"
        )
    for i, n_i in enumerate(system.drift_bilinear):
        if n_i.shape != (n, n):
            defects.append(f"drift_bilinear[{i}] must be {n}x{n}, got {n_i.shape}")
    d = system.noise_dim
    if system.diffusion.size and system.diffusion.shape[0] != n:
        defects.append(f"diffusion must have {n} rows, got {system.diffusion.shape[0]}")
    if system.noise_correlation.shape != (d, d):
        defects.append(
            f"noise dimension mismatch: noise_correlation is {system.noise_correlation.shape}, "
            f"diffusion has {d} columns"
        )
    elif not is_psd(system.noise_correlation, PSD_TOL):
        defects.append("noise_correlation not PSD")
    if system.initial_mean.shape != (n,):
        defects.append(
            f"initial_mean must have length {n}, got {system.initial_mean.shape[0]}"
        )
    if system.initial_covariance.shape != (n, n):
        defects.append(
            f"initial_covariance must be {n}x{n}, got {system.initial_covariance.shape}"
        )
    elif not is_psd(system.initial_covariance, PSD_TOL):
        defects.append("initial_covariance not PSD")
    return ValidationReport(tuple(defects))


def _basis_matrix(basis):
    mat = getattr(basis, "matrix", basis)
    return np.asarray(mat, dtype=float)


def galerkin_project(system, basis):
    """Project a system onto an orthonormal basis (the intrusive route).

    Parameters
    ----------
    system : BilinearSdeSystem
    basis : array of shape (n, r) with orthonormal columns, or any object
        with a ``matrix`` attribute holding one.

    Returns
    -------
    BilinearSdeSystem of state dimension ``r`` with coefficients
    ``V^T A V``, ``V^T B``, ``V^T N_i V``, ``V^T M``, unchanged noise
    correlation, and projected initial law.
    """
    v = _basis_matrix(basis)
    if v.ndim != 2 or v.shape[0] != system.state_dim:
        raise ValueError(
            f"basis must have {system.state_dim} rows, got shape {v.shape}"
        )
    check_orthonormal(v, "basis", ORTHONORMALITY_TOL)
    report = validate_system(system)
    if not report.is_valid:
        raise ValueError(f"cannot project an inconsistent system: {report.defects}")
    return BilinearSdeSystem(
        drift_linear=v.T @ system.drift_linear @ v,
        drift_input=v.T @ system.drift_input,
        drift_bilinear=tuple(v.T @ n_i @ v for n_i in system.drift_bilinear),
        diffusion=v.T @ system.diffusion if system.diffusion.size else system.diffusion,
        noise_correlation=system.noise_correlation,
        initial_mean=v.T @ system.initial_mean,
        initial_covariance=v.T @ system.initial_covariance @ v,
        label=f"{system.label}|proj-r{v.shape[1]}" if system.label else f"proj-r{v.shape[1]}",
    )
