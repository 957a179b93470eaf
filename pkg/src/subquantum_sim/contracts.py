from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt


class SubqmError(RuntimeError):
    """Root of every error raised by subquantum_sim."""


class InvariantViolation(SubqmError):
    """Raised when a runtime invariant is violated."""


class ConfigInvalid(SubqmError, ValueError):
    """Configuration could not be parsed or failed schema validation."""


class IoFailure(SubqmError, OSError):
    """An artifact could not be written, read, or verified."""


class NumericFailure(SubqmError):
    """Base class for failures of the numerical calculus."""


class SingularMatrix(NumericFailure):
    pass


class SingularForm(NumericFailure):
    pass


class NonIntegrable(NumericFailure):
    pass


class NonNormalizable(NumericFailure):
    pass


class NonpositiveDuration(NumericFailure):
    pass


class RegimeViolation(NumericFailure):
    pass


class StepDiverged(NumericFailure):
    pass


class SupportEscapedGrid(NumericFailure):
    pass


class SamplingDegenerate(NumericFailure):
    pass


class FitFailed(NumericFailure):
    pass


class ZeroCounts(NumericFailure):
    pass


class TooFewPulses(NumericFailure):
    pass


class InvalidCount(NumericFailure):
    pass


def _is_finite(x: float) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(float(x))


def validate_model_scalars(
    masses: Sequence[float], constants: Sequence[float], hbar: float
) -> None:
    """
    Contract for model parameters.

    Invariants:
      - PAR-001: at least one degree of freedom, one constant per mass
      - PAR-002: every mass is finite and > 0
      - PAR-003: every subquantum constant is finite and > 0
      - PAR-004: hbar is finite and > 0
    """
    if len(masses) < 1:
        raise InvariantViolation("PAR-001 need at least one degree of freedom")
    if len(constants) != len(masses):
        raise InvariantViolation(
            f"PAR-001 got {len(constants)} constants for {len(masses)} masses"
        )
    for i, m in enumerate(masses):
        if not _is_finite(m) or float(m) <= 0.0:
            raise InvariantViolation(f"PAR-002 mass[{i}] must be finite and > 0, got {m}")
    for i, a in enumerate(constants):
        if not _is_finite(a) or float(a) <= 0.0:
            raise InvariantViolation(f"PAR-003 constant[{i}] must be finite and > 0, got {a}")
    if not _is_finite(hbar) or float(hbar) <= 0.0:
        raise InvariantViolation(f"PAR-004 hbar must be finite and > 0, got {hbar}")


def validate_quadratic_arrays(
    M: npt.NDArray[np.complex128], B: npt.NDArray[np.complex128], c: complex
) -> None:
    """
    Contract for the coefficient arrays of a Gaussian form.

    Invariants:
      - QF-001: M is square, B has matching length
      - QF-002: M is symmetric (not Hermitian)
      - QF-003: all coefficients are finite
    """
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvariantViolation(f"QF-001 M must be square, got shape {M.shape}")
    if B.shape != (M.shape[0],):
        raise InvariantViolation(f"QF-001 B shape {B.shape} does not match M {M.shape}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(B)) and np.isfinite(c)):
        raise InvariantViolation("QF-003 coefficients must be finite")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and float(np.max(np.abs(M - M.T))) > 1e-9 * scale:
        raise InvariantViolation("QF-002 M must be symmetric")


def validate_grid_axes(x: npt.NDArray[np.float64], p: npt.NDArray[np.float64]) -> None:
    """
    Contract for phase-space grids.

    Invariants:
      - GRD-001: both axes have at least 4 nodes
      - GRD-002: both axes are strictly increasing and uniformly spaced
    """
    for name, ax in (("x", x), ("p", p)):
        if ax.ndim != 1 or ax.size < 4:
            raise InvariantViolation(f"GRD-001 axis {name} needs >= 4 nodes")
        d = np.diff(ax)
        if np.any(d <= 0.0):
            raise InvariantViolation(f"GRD-002 axis {name} must be strictly increasing")
        if float(np.max(np.abs(d - d[0]))) > 1e-9 * abs(float(d[0])):
            raise InvariantViolation(f"GRD-002 axis {name} must be uniformly spaced")


def validate_rotation(R: npt.NDArray[np.float64], *, tol: float = 1e-12) -> None:
    """
    Contract for the collective-coordinate rotation.

    Invariants:
      - CRF-001: R is square and orthogonal
      - CRF-002: the last column is the normalized all-ones vector
    """
    n = R.shape[0]
    if R.ndim != 2 or R.shape[1] != n:
        raise InvariantViolation(f"CRF-001 rotation must be square, got {R.shape}")
    if float(np.max(np.abs(R.T @ R - np.eye(n)))) > tol * max(1, n):
        raise InvariantViolation("CRF-001 rotation is not orthogonal")
    if float(np.max(np.abs(R[:, -1] - 1.0 / math.sqrt(n)))) > tol:
        raise InvariantViolation("CRF-002 last column must be n^-1/2 (1, ..., 1)")


def validate_counts(counts: Sequence[int], n_all: int) -> None:
    """
    Contract for one pulse of detector counts.

    Invariants:
      - CNT-001: counts are non-negative integers
      - CNT-002: total detected never exceeds particles sent
    """
    for k in counts:
        if int(k) != k or k < 0:
            raise InvariantViolation(f"CNT-001 invalid count {k}")
    if sum(counts) > n_all:
        raise InvariantViolation(f"CNT-002 detected {sum(counts)} > sent {n_all}")
