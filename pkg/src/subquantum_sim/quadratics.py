"""
Gaussian-form calculus.

A form is ``f(X) = exp(log_scale) * exp{(i/hbar) * (1/2 X^T M X + B^T X + c)}`` with
complex symmetric ``M``. Products, linear substitutions, Fresnel/Gaussian
marginalization and moments are all closed operations on forms. Every
inverse, determinant and eigenvalue computation runs on a diagonally
equilibrated copy of the matrix so that forms written in SI units (entries
spanning tens of decades) keep full relative precision.
"""

from __future__ import annotations

import cmath
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .contracts import (
    InvariantViolation,
    NonIntegrable,
    NonNormalizable,
    SingularForm,
    SingularMatrix,
    validate_quadratic_arrays,
)

logger = logging.getLogger(__name__)

CArray = npt.NDArray[np.complex128]
FArray = npt.NDArray[np.float64]

TOL_DET = 1e-12
TOL_IM = 1e-10


@dataclass(frozen=True, eq=False)
class QuadForm:
    M: CArray
    B: CArray
    c: complex = 0j
    log_scale: complex = 0j
    hbar: float = 1.0

    def __post_init__(self) -> None:
        M = np.array(self.M, dtype=np.complex128, copy=True)
        if M.ndim == 0:
            M = M.reshape(1, 1)
        B = np.array(self.B, dtype=np.complex128, copy=True).reshape(-1)
        if M.size:
            M = 0.5 * (M + M.T)
        validate_quadratic_arrays(M, B, complex(self.c))
        if not (self.hbar > 0.0 and math.isfinite(self.hbar)):
            raise InvariantViolation(f"QF-004 hbar must be finite and > 0, got {self.hbar}")
        if not cmath.isfinite(complex(self.log_scale)):
            raise InvariantViolation("QF-003 log_scale must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", complex(self.c))
        object.__setattr__(self, "log_scale", complex(self.log_scale))
        object.__setattr__(self, "hbar", float(self.hbar))

    @classmethod
    def unit(cls, dim: int, hbar: float = 1.0) -> QuadForm:
        """The constant function 1 on ``dim`` variables."""
        return cls(np.zeros((dim, dim)), np.zeros(dim), hbar=hbar)

    @property
    def dim(self) -> int:
        return int(self.B.shape[0])

    def is_normalizable(self, tol: float = TOL_IM) -> bool:
        """True when Im(M) is positive semi-definite."""
        if self.dim == 0:
            return True
        S, _ = _equilibrate(self.M.imag.astype(np.float64))
        return bool(np.min(np.linalg.eigvalsh(S)) >= -tol)

    def log_evaluate(self, X: npt.ArrayLike) -> CArray:
        Xa = np.asarray(X, dtype=np.float64)
        if Xa.shape[-1] != self.dim:
            raise InvariantViolation(
                f"QF-001 points have {Xa.shape[-1]} coords, form has {self.dim}"
            )
        quad = 0.5 * np.einsum("...i,ij,...j->...", Xa, self.M, Xa)
        lin = Xa @ self.B
        return self.log_scale + (1j / self.hbar) * (quad + lin + self.c)

    def evaluate(self, X: npt.ArrayLike) -> CArray:
        return np.exp(self.log_evaluate(X))

    def value(self) -> complex:
        """Value of a dimension-0 form."""
        if self.dim != 0:
            raise InvariantViolation(f"QF-001 value() needs a dimension-0 form, got {self.dim}")
        return complex(cmath.exp(self.log_scale + 1j * self.c / self.hbar))

    def with_log_scale(self, log_scale: complex) -> QuadForm:
        return QuadForm(self.M, self.B, self.c, log_scale, self.hbar)


def _equilibrate(
    A: npt.NDArray[np.generic], iters: int = 8
) -> tuple[npt.NDArray[np.generic], FArray]:
    """Symmetric Ruiz scaling: returns ``(D A D, d)`` with every row max near 1."""
    n = A.shape[0]
    d = np.ones(n)
    S = A.copy()
    for _ in range(iters):
        r = np.max(np.abs(S), axis=1) if n else np.ones(0)
        r = np.where(r > 0.0, r, 1.0)
        f = 1.0 / np.sqrt(r)
        d *= f
        S = S * f[:, None] * f[None, :]
    return S, d


def _check_block(Mzz: CArray) -> tuple[CArray, FArray]:
    S, d = _equilibrate(Mzz)
    sv = np.linalg.svd(S, compute_uv=False)
    if sv.size and sv[-1] <= TOL_DET * sv[0]:
        raise SingularForm(
            f"integration block is singular (sigma_min/sigma_max={sv[-1] / sv[0]:.3e})"
        )
    if sv.size and float(np.min(np.linalg.eigvalsh(S.imag))) < -TOL_IM * float(sv[0]):
        raise NonIntegrable("Im(M) on the integration block is not positive semi-definite")
    return S, d


def _log_det_minus_i(S: CArray, d: FArray) -> complex:
    # Principal log per eigenvalue; eigenvalues of -iS have Re >= 0 when Im(S) is PSD.
    eig = np.linalg.eigvals(-1j * S)
    return complex(np.sum(np.log(eig.astype(np.complex128)))) - 2.0 * float(np.sum(np.log(d)))


def _scaled_solve(S: CArray, d: FArray, rhs: CArray) -> CArray:
    # (D S^-1 D) rhs for Mzz = D^-1 S D^-1
    Dr = d[:, None] * rhs if rhs.ndim == 2 else d * rhs
    sol = np.linalg.solve(S, Dr)
    return d[:, None] * sol if sol.ndim == 2 else d * sol


def log_det_minus_i(A: npt.ArrayLike) -> complex:
    """``log det(-i A)`` on the +i0 branch, after singularity and integrability checks."""
    S, d = _check_block(np.asarray(A, dtype=np.complex128))
    return _log_det_minus_i(S, d)


def solve_block(A: npt.ArrayLike, rhs: npt.ArrayLike) -> CArray:
    Am = np.asarray(A, dtype=np.complex128)
    S, d = _check_block(Am)
    return _scaled_solve(S, d, np.asarray(rhs, dtype=np.complex128))


def multiply(f: QuadForm, g: QuadForm) -> QuadForm:
    if f.dim != g.dim:
        raise InvariantViolation(f"QF-001 dimension mismatch {f.dim} vs {g.dim}")
    if not math.isclose(f.hbar, g.hbar, rel_tol=1e-12):
        raise InvariantViolation("QF-004 hbar mismatch")
    return QuadForm(f.M + g.M, f.B + g.B, f.c + g.c, f.log_scale + g.log_scale, f.hbar)


def conjugate(f: QuadForm) -> QuadForm:
    return QuadForm(-f.M.conj(), -f.B.conj(), -f.c.conjugate(), f.log_scale.conjugate(), f.hbar)


def transform(f: QuadForm, S: npt.ArrayLike, shift: npt.ArrayLike | None = None) -> QuadForm:
    """Form of ``Y -> f(S Y + shift)``; ``S`` may be rectangular (``f.dim`` rows)."""
    Sm = np.asarray(S, dtype=np.float64)
    if Sm.ndim != 2 or Sm.shape[0] != f.dim:
        raise InvariantViolation(f"QF-001 substitution of shape {Sm.shape} for dim {f.dim}")
    t = np.zeros(f.dim) if shift is None else np.asarray(shift, dtype=np.float64)
    Mt = f.M @ t
    return QuadForm(
        Sm.T @ f.M @ Sm,
        Sm.T @ (Mt + f.B),
        f.c + 0.5 * complex(t @ Mt) + complex(f.B @ t),
        f.log_scale,
        f.hbar,
    )


def embed(f: QuadForm, indices: Sequence[int], dim: int) -> QuadForm:
    """Lift ``f`` to ``dim`` variables, variable ``i`` of ``f`` sitting at ``indices[i]``."""
    if len(indices) != f.dim or len(set(indices)) != len(indices):
        raise InvariantViolation("QF-001 embedding indices must be distinct, one per variable")
    S = np.zeros((f.dim, dim))
    for i, j in enumerate(indices):
        S[i, j] = 1.0
    return transform(f, S)


def marginalize(f: QuadForm, block: Sequence[int], *, regularize: float = 0.0) -> QuadForm:
    """
    Integrate ``f`` over the variables in ``block``.

    Purely real blocks are Fresnel integrals and take the +i0 branch; a positive
    ``regularize`` adds ``i * regularize`` to the block diagonal first.
    """
    z = sorted(set(int(i) for i in block))
    if not z:
        return f
    if z[0] < 0 or z[-1] >= f.dim:
        raise InvariantViolation(f"QF-001 block {z} outside 0..{f.dim - 1}")
    y = [i for i in range(f.dim) if i not in set(z)]
    Mzz = f.M[np.ix_(z, z)].copy()
    if regularize > 0.0:
        Mzz = Mzz + 1j * regularize * np.eye(len(z))
        logger.debug("regularized block %s by i*%g", z, regularize)
    S, d = _check_block(Mzz)
    Myz = f.M[np.ix_(y, z)]
    Bz = f.B[z]
    rhs = np.concatenate([Myz.T, Bz[:, None]], axis=1)
    sol = _scaled_solve(S, d, rhs)
    k = len(z)
    newM = f.M[np.ix_(y, y)] - Myz @ sol[:, :-1]
    newB = f.B[y] - Myz @ sol[:, -1]
    newc = f.c - 0.5 * complex(Bz @ sol[:, -1])
    log_scale = (
        f.log_scale + 0.5 * k * math.log(2.0 * math.pi * f.hbar) - 0.5 * _log_det_minus_i(S, d)
    )
    return QuadForm(newM, newB, newc, log_scale, f.hbar)


def _precision(f: QuadForm) -> tuple[FArray, FArray, FArray, FArray]:
    if f.dim == 0:
        raise NonNormalizable("a dimension-0 form has no moments")
    P = (2.0 / f.hbar) * f.M.imag
    J = -(2.0 / f.hbar) * f.B.imag
    S, d = _equilibrate(P)
    eig = np.linalg.eigvalsh(S)
    if float(np.min(eig)) <= TOL_DET * max(1.0, float(np.max(np.abs(eig)))):
        raise NonNormalizable("|f|^2 is not normalizable: Im(M) is not positive definite")
    return P, J, S, d


def moments(f: QuadForm) -> tuple[FArray, FArray]:
    """Mean and covariance of the density ``|f|^2 / ||f||^2``."""
    _, J, S, d = _precision(f)
    cov = d[:, None] * np.linalg.inv(S) * d[None, :]
    cov = 0.5 * (cov + cov.T)
    return cov @ J, cov


def log_squared_norm(f: QuadForm) -> float:
    base = 2.0 * f.log_scale.real - (2.0 / f.hbar) * f.c.imag
    if f.dim == 0:
        return float(base)
    _, J, S, d = _precision(f)
    _, logdet_s = np.linalg.slogdet(S)
    logdet = logdet_s - 2.0 * float(np.sum(np.log(d)))
    mean = d * np.linalg.solve(S, d * J)
    return float(
        base + 0.5 * f.dim * math.log(2.0 * math.pi) - 0.5 * logdet + 0.5 * float(J @ mean)
    )


def squared_norm(f: QuadForm) -> float:
    return math.exp(log_squared_norm(f))


def l2_norm(f: QuadForm) -> float:
    return math.exp(0.5 * log_squared_norm(f))


def gradient_norm(f: QuadForm) -> float:
    """Exact L2 norm of the gradient of ``f``."""
    mean, cov = moments(f)
    shift = f.M @ mean + f.B
    spread = float(np.real(np.trace(f.M @ cov @ f.M.conj().T)))
    g2 = (float(np.real(np.vdot(shift, shift))) + spread) / f.hbar**2
    return math.sqrt(g2) * l2_norm(f)


def adjugate_inverse_2x2(A: npt.ArrayLike, tol: float = TOL_DET) -> CArray:
    Am = np.asarray(A, dtype=np.complex128)
    if Am.shape != (2, 2):
        raise InvariantViolation(f"QF-001 expected a 2x2 matrix, got {Am.shape}")
    a, b, c, d = Am[0, 0], Am[0, 1], Am[1, 0], Am[1, 1]
    det = a * d - b * c
    scale = max(abs(a * d), abs(b * c))
    if scale == 0.0 or abs(det) <= tol * scale:
        raise SingularMatrix(f"2x2 determinant {det} is below tolerance")
    return np.array([[d, -b], [-c, a]], dtype=np.complex128) / det


@dataclass(frozen=True)
class RankOneTerm:
    """One factor ``exp{(i/2hbar) a (X^T E + b)^2}`` of a rank-one product."""

    a: complex
    E: tuple[float, float]
    b: complex = 0j


@dataclass(frozen=True)
class GaussianIntegral:
    exponent: complex
    log_prefactor: complex
    delta: complex

    @property
    def log_value(self) -> complex:
        return self.log_prefactor + self.exponent

    @property
    def value(self) -> complex:
        return complex(cmath.exp(self.log_value))


def _perp(E: FArray) -> FArray:
    return np.array([E[1], -E[0]])


def assemble_rank_one(
    terms: Sequence[RankOneTerm], a0: complex, B0: npt.ArrayLike, hbar: float = 1.0
) -> QuadForm:
    """The integrand of :func:`integrate_rank_one_2d` as a 2-variable form."""
    A = np.zeros((2, 2), dtype=np.complex128)
    Y = a0 * np.asarray(B0, dtype=np.complex128)
    c = 0j
    for t in terms:
        E = np.asarray(t.E, dtype=np.float64)
        A += t.a * np.outer(E, E)
        Y = Y + t.a * t.b * E
        c += 0.5 * t.a * t.b**2
    return QuadForm(A, Y, c, 0j, hbar)


def integrate_rank_one_2d(
    terms: Sequence[RankOneTerm], a0: complex, B0: npt.ArrayLike, hbar: float = 1.0
) -> GaussianIntegral:
    """
    Integral over the plane of a product of rank-one Gaussian factors
    times ``exp{(i/hbar) a0 B0.X}``.

    The exponent is ``(i/2hbar)[-Y^T (sum a_k E_k^perp E_k^perp^T) Y / Delta + sum a_k b_k^2]``
    with ``Y = sum a_k b_k E_k + a0 B0`` and ``Delta = det(sum a_k E_k E_k^T)``.
    """
    A = np.zeros((2, 2), dtype=np.complex128)
    adj = np.zeros((2, 2), dtype=np.complex128)
    Y = a0 * np.asarray(B0, dtype=np.complex128)
    tail = 0j
    for t in terms:
        E = np.asarray(t.E, dtype=np.float64)
        Ep = _perp(E)
        A += t.a * np.outer(E, E)
        adj += t.a * np.outer(Ep, Ep)
        Y = Y + t.a * t.b * E
        tail += t.a * t.b**2
    S, d = _check_block(A)
    delta = complex(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    exponent = (1j / (2.0 * hbar)) * (-complex(Y @ adj @ Y) / delta + tail)
    log_prefactor = math.log(2.0 * math.pi * hbar) - 0.5 * _log_det_minus_i(S, d)
    return GaussianIntegral(exponent=exponent, log_prefactor=log_prefactor, delta=delta)


def integrate_rank_one_1d(
    terms: Sequence[tuple[complex, complex]], b0: complex, hbar: float = 1.0
) -> complex:
    """Exponent of ``int exp{(i/2hbar) sum a_k (x + b_k)^2 + (i/hbar) b0 x} dx``."""
    A = sum((complex(a) for a, _ in terms), 0j)
    scale = max((abs(complex(a)) for a, _ in terms), default=0.0)
    if scale == 0.0 or abs(A) <= TOL_DET * scale:
        raise SingularForm(f"sum of coefficients {A} vanishes")
    if A.imag < -TOL_IM * scale:
        raise NonIntegrable(f"Im(sum a_k) = {A.imag} < 0")
    Y = sum((complex(a) * complex(b) for a, b in terms), 0j) + complex(b0)
    tail = sum((complex(a) * complex(b) ** 2 for a, b in terms), 0j)
    return (1j / (2.0 * hbar)) * (-(Y**2) / A + tail)
