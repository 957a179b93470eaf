"""
Propagation kernels of the subquantum relaxation model.

Phase-space variables of one degree of freedom are ordered ``(p, x)``; with ``n``
degrees of freedom they are interleaved ``(p_0, x_0, p_1, x_1, ...)``. The kernel
from time 0 to ``T`` is ``N_T exp{(i/hbar)[1/2 X1^T Qin X1 + X1^T Qtr X2 + 1/2 X2^T Qout X2]}``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy.linalg import block_diag

from .contracts import NonpositiveDuration, RegimeViolation, validate_model_scalars
from .quadratics import (
    CArray,
    FArray,
    QuadForm,
    embed,
    gradient_norm,
    l2_norm,
    marginalize,
    multiply,
)

logger = logging.getLogger(__name__)

Regime = Literal["exact", "short_time", "long_time"]

# Below this value of beta*T the combination D = y - 2 tanh(y/2) is taken from its series.
SERIES_CUTOFF = 1e-2
# Short-time and reduced kernels refuse beta*T at or above this value.
SHORT_TIME_LIMIT = 0.3


@dataclass(frozen=True)
class ModelParams:
    """Masses and subquantum constants ``a`` (``tau^2 = a m``) of each degree of freedom."""

    m: tuple[float, ...]
    a: tuple[float, ...]
    hbar: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", tuple(float(v) for v in self.m))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        validate_model_scalars(self.m, self.a, self.hbar)

    @classmethod
    def create(
        cls,
        m: float | Sequence[float],
        a: float | Sequence[float],
        hbar: float = 1.0,
        n: int | None = None,
    ) -> ModelParams:
        ms = [float(m)] if isinstance(m, (int, float)) else [float(v) for v in m]
        as_ = [float(a)] if isinstance(a, (int, float)) else [float(v) for v in a]
        size = n if n is not None else max(len(ms), len(as_))
        if len(ms) == 1:
            ms = ms * size
        if len(as_) == 1:
            as_ = as_ * size
        return cls(tuple(ms), tuple(as_), hbar)

    @classmethod
    def from_tau(
        cls, m: float | Sequence[float], tau: float, hbar: float = 1.0, n: int | None = None
    ) -> ModelParams:
        ms = [float(m)] if isinstance(m, (int, float)) else [float(v) for v in m]
        size = n if n is not None else len(ms)
        if len(ms) == 1:
            ms = ms * size
        return cls(tuple(ms), tuple(tau**2 / v for v in ms), hbar)

    @classmethod
    def natural(cls, n: int = 1) -> ModelParams:
        return cls((1.0,) * n, (1.0,) * n, 1.0)

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def masses(self) -> FArray:
        return np.asarray(self.m, dtype=np.float64)

    @property
    def tau(self) -> FArray:
        return np.sqrt(np.asarray(self.a) * self.masses)

    @property
    def beta(self) -> FArray:
        return 1.0 / self.tau

    def dof(self, i: int) -> ModelParams:
        return ModelParams((self.m[i],), (self.a[i],), self.hbar)

    def with_beta_scale(self, factor: float) -> ModelParams:
        """Same masses, every beta multiplied by ``factor``."""
        return ModelParams(self.m, tuple(v / factor**2 for v in self.a), self.hbar)


@dataclass(frozen=True)
class KernelCoefficients:
    """
    Per-degree-of-freedom kernel entries.

    ``Qin=[[a,-d],[-d,c]]``, ``Qtr=[[b,d],[-d,-c]]``, ``Qout=[[a,d],[d,c]]``.
    """

    a: FArray
    b: FArray
    c: FArray
    d: FArray


@dataclass(frozen=True, eq=False)
class PropagatorKernel:
    T: float
    Qin: CArray
    Qtr: CArray
    Qout: CArray
    log_norm: float
    regime: Regime
    hbar: float

    @property
    def n(self) -> int:
        return self.Qin.shape[0] // 2

    @property
    def log_prefactor(self) -> complex:
        """``log N_T``: the unitary modulus with phase ``-i pi/2`` per degree of freedom."""
        return complex(self.log_norm, -0.5 * math.pi * self.n)

    def blocks(self, i: int) -> tuple[CArray, CArray, CArray]:
        s = slice(2 * i, 2 * i + 2)
        return self.Qin[s, s], self.Qtr[s, s], self.Qout[s, s]

    def joint_form(self) -> QuadForm:
        """The kernel as a form over ``(X1, X2)``."""
        M = np.block([[self.Qin, self.Qtr], [self.Qtr.T, self.Qout]])
        return QuadForm(M, np.zeros(4 * self.n), 0j, self.log_prefactor, self.hbar)

    def exponent(self, X1: npt.ArrayLike, X2: npt.ArrayLike) -> npt.NDArray[np.complex128]:
        X = np.concatenate([np.asarray(X1, float), np.asarray(X2, float)], axis=-1)
        form = self.joint_form()
        return form.log_evaluate(X) - form.log_scale


def _check_duration(T: float) -> None:
    if not math.isfinite(T) or T <= 0.0:
        raise NonpositiveDuration(f"duration must be finite and > 0, got {T}")


def _series_d(y: FArray) -> FArray:
    y2 = y * y
    tail = 17.0 / 20160.0 - y2 * 31.0 / 362880.0
    return y * y2 * (1.0 / 12.0 + y2 * (-1.0 / 120.0 + y2 * tail))


def big_d(y: npt.ArrayLike) -> FArray:
    """``y - 2 tanh(y/2)``, positive for every ``y > 0``."""
    ya = np.asarray(y, dtype=np.float64)
    small = ya < SERIES_CUTOFF
    if np.any(small):
        logger.debug("series branch for beta*T=%s", ya[small])
    with np.errstate(invalid="ignore"):
        direct = ya - 2.0 * np.tanh(0.5 * ya)
    return np.where(small, _series_d(ya), direct)


def _csch(y: FArray) -> FArray:
    return 2.0 * np.exp(-y) / -np.expm1(-2.0 * y)


def _log_sinh(y: FArray) -> FArray:
    return y + np.log(-np.expm1(-2.0 * y)) - math.log(2.0)


def _y(T: float, params: ModelParams) -> FArray:
    _check_duration(T)
    return params.beta * T


def coefficients_abcd(T: float, params: ModelParams) -> KernelCoefficients:
    y = _y(T, params)
    bm = params.beta * params.masses
    h = np.tanh(0.5 * y)
    D = big_d(y)
    coth = 1.0 / np.tanh(y)
    return KernelCoefficients(
        a=(coth + h * h / D) / bm,
        b=(-_csch(y) + h * h / D) / bm,
        c=bm / D,
        d=-h / D,
    )


def short_time_coefficients(T: float, params: ModelParams) -> KernelCoefficients:
    y = _y(T, params)
    bm = params.beta * params.masses
    c = bm * omega_short(T, params)
    return KernelCoefficients(a=4.0 / (bm * y), b=2.0 / (bm * y), c=c, d=-6.0 / y**2)


def long_time_coefficients(T: float, params: ModelParams) -> KernelCoefficients:
    bm = params.beta * params.masses
    w = omega_long(T, params)
    return KernelCoefficients(a=(1.0 + w) / bm, b=w / bm, c=bm * w, d=-w)


def omega_long(T: float, params: ModelParams) -> FArray:
    return 1.0 / (_y(T, params) - 2.0)


def omega_short(T: float, params: ModelParams) -> FArray:
    return 12.0 / _y(T, params) ** 3


def omega_reduced(T: float, params: ModelParams) -> FArray:
    return 3.0 / _y(T, params) ** 3


def log_normalization(T: float, params: ModelParams) -> float:
    """``log |N_T|``; the modulus makes the kernel unitary on L2(R^2n)."""
    y = _y(T, params)
    per_dof = _log_sinh(y) + np.log(big_d(y))
    return float(-params.n * math.log(2.0 * math.pi * params.hbar) - 0.5 * np.sum(per_dof))


def normalization(T: float, params: ModelParams) -> float:
    return math.exp(log_normalization(T, params))


def _assemble(co: KernelCoefficients) -> tuple[CArray, CArray, CArray]:
    qin, qtr, qout = [], [], []
    for a, b, c, d in zip(co.a, co.b, co.c, co.d):
        qin.append(np.array([[a, -d], [-d, c]]))
        qtr.append(np.array([[b, d], [-d, -c]]))
        qout.append(np.array([[a, d], [d, c]]))
    return (
        block_diag(*qin).astype(np.complex128),
        block_diag(*qtr).astype(np.complex128),
        block_diag(*qout).astype(np.complex128),
    )


def build_kernel(T: float, params: ModelParams, regime: Regime = "exact") -> PropagatorKernel:
    if regime == "exact":
        co = coefficients_abcd(T, params)
        log_norm = log_normalization(T, params)
    elif regime == "short_time":
        y = _y(T, params)
        if np.any(y >= SHORT_TIME_LIMIT):
            raise RegimeViolation(f"short-time kernel needs beta*T < {SHORT_TIME_LIMIT}, got {y}")
        co = short_time_coefficients(T, params)
        log_norm = float(
            -params.n * math.log(2.0 * math.pi * params.hbar)
            + 0.5 * np.sum(np.log(12.0 / y**4))
        )
    elif regime == "long_time":
        y = _y(T, params)
        if np.any(y <= 2.0):
            raise RegimeViolation(f"long-time kernel needs beta*T > 2, got {y}")
        co = long_time_coefficients(T, params)
        # det Qtr vanishes in this limit; the modulus comes from the exact kernel.
        log_norm = log_normalization(T, params)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    Qin, Qtr, Qout = _assemble(co)
    return PropagatorKernel(T, Qin, Qtr, Qout, log_norm, regime, params.hbar)


def _split(X: npt.ArrayLike, n: int) -> tuple[FArray, FArray]:
    Xa = np.asarray(X, dtype=np.float64)
    if Xa.shape[-1] != 2:
        raise ValueError("phase-space points need a trailing (p, x) axis")
    if n > 1 and (Xa.ndim < 2 or Xa.shape[-2] != n):
        raise ValueError(f"expected {n} degrees of freedom on axis -2")
    return Xa[..., 0], Xa[..., 1]


def classical_action(
    X1: npt.ArrayLike, X2: npt.ArrayLike, T: float, params: ModelParams
) -> FArray:
    """
    Action of the classical path joining ``X1=(p, x)`` at time 0 to ``X2`` at ``T``.

    Points have shape ``(..., n, 2)`` (or ``(..., 2)`` when ``n == 1``); the result
    sums over degrees of freedom.
    """
    y = _y(T, params)
    bm = params.beta * params.masses
    p1, x1 = _split(X1, params.n)
    p2, x2 = _split(X2, params.n)
    h = np.tanh(0.5 * y)
    coth = 1.0 / np.tanh(y)
    D = big_d(y)
    mom = ((p1 - p2) ** 2 * coth + 2.0 * p1 * p2 * h) / (2.0 * bm)
    pos = bm / (2.0 * D) * (x2 - x1 - (p1 + p2) * h / bm) ** 2
    total = mom + pos
    return np.sum(total, axis=-1) if params.n > 1 else total


def short_time_action(
    X1: npt.ArrayLike, X2: npt.ArrayLike, T: float, params: ModelParams
) -> FArray:
    """Fluctuation part of the action for ``beta*T << 1`` (uniform motion has zero action)."""
    y = _y(T, params)
    if np.any(y >= SHORT_TIME_LIMIT):
        raise RegimeViolation(f"short-time action needs beta*T < {SHORT_TIME_LIMIT}, got {y}")
    bm = params.beta * params.masses
    p1, x1 = _split(X1, params.n)
    p2, x2 = _split(X2, params.n)
    drift = (p1 + p2) * T / (2.0 * params.masses)
    total = (p2 - p1) ** 2 / (2.0 * bm * y) + 0.5 * bm * (12.0 / y**3) * (x2 - x1 - drift) ** 2
    return np.sum(total, axis=-1) if params.n > 1 else total


def reduced_kernel(T: float, params: ModelParams) -> QuadForm:
    """
    Short-time kernel integrated over the final momentum.

    Variables per degree of freedom are ``(p1, x1, x2)``; the exponent is
    ``(i/2hbar) beta m (3/(beta T)^3) (x2 - x1 - T p1/m)^2``.
    """
    y = _y(T, params)
    if np.any(y >= SHORT_TIME_LIMIT):
        raise RegimeViolation(f"reduced kernel needs beta*T < {SHORT_TIME_LIMIT}, got {y}")
    bm = params.beta * params.masses
    w = omega_reduced(T, params)
    blocks = []
    log_scale = complex(-params.n * math.log(2.0 * math.pi * params.hbar))
    for i in range(params.n):
        v = np.array([-T / params.m[i], -1.0, 1.0])
        blocks.append(bm[i] * w[i] * np.outer(v, v))
        qout_pp = 4.0 / (bm[i] * y[i])
        # Prefactor phase -i pi/2, Fresnel phase +i pi/4 from the final momentum.
        log_scale += 0.5 * math.log(12.0 / y[i] ** 4)
        log_scale += 0.5 * math.log(2.0 * math.pi * params.hbar / qout_pp) - 1j * math.pi / 4.0
    M = block_diag(*blocks)
    return QuadForm(M, np.zeros(3 * params.n), 0j, log_scale, params.hbar)


def reduced_exponent(
    p1: npt.ArrayLike, x1: npt.ArrayLike, x2: npt.ArrayLike, T: float, params: ModelParams
) -> npt.NDArray[np.complex128]:
    """Exponent of :func:`reduced_kernel` for one degree of freedom."""
    form = reduced_kernel(T, params.dof(0))
    parts = (np.asarray(p1, float), np.asarray(x1, float), np.asarray(x2, float))
    X = np.stack(np.broadcast_arrays(*parts), axis=-1)
    return form.log_evaluate(X) - form.log_scale


def qm_free_kernel(T: float, m: float, hbar: float = 1.0) -> QuadForm:
    """Free Schroedinger kernel over ``(x1, x2)``: exponent ``(i/2hbar)(m/T)(x2 - x1)^2``."""
    _check_duration(T)
    k = m / T
    M = k * np.array([[1.0, -1.0], [-1.0, 1.0]])
    log_scale = 0.5 * math.log(m / (2.0 * math.pi * hbar * T)) - 1j * math.pi / 4.0
    return QuadForm(M, np.zeros(2), 0j, log_scale, hbar)


def relaxation_form(t: float, params: ModelParams, c0: float = 1.0) -> QuadForm:
    """
    Momentum-space relaxation kernel over ``(p, q)``.

    Exponent ``(i/hbar)(1/2k)[(p^2 + q^2) coth(beta t) - 2 p q / sinh(beta t)]`` with
    ``k = c0 beta m``; modulus ``(2 pi hbar k sinh(beta t))^(-1/2)``.
    """
    p1 = params.dof(0)
    y = float(_y(t, p1)[0])
    k = c0 * float(p1.beta[0]) * p1.m[0]
    coth = 1.0 / math.tanh(y)
    csch = float(_csch(np.array([y]))[0])
    M = np.array([[coth, -csch], [-csch, coth]]) / k
    log_scale = (
        -0.5 * (math.log(2.0 * math.pi * params.hbar * k) + float(_log_sinh(np.array([y]))[0]))
        - 1j * math.pi / 4.0
    )
    return QuadForm(M, np.zeros(2), 0j, log_scale, params.hbar)


def relaxation_kernel(
    p: npt.ArrayLike, q: npt.ArrayLike, t: float, params: ModelParams, c0: float = 1.0
) -> npt.NDArray[np.complex128]:
    form = relaxation_form(t, params, c0)
    X = np.stack(np.broadcast_arrays(np.asarray(p, float), np.asarray(q, float)), axis=-1)
    return form.log_evaluate(X) - form.log_scale


def evolve_momentum(phi: QuadForm, t: float, params: ModelParams, c0: float = 1.0) -> QuadForm:
    """Apply the relaxation kernel for time ``t`` to a one-variable form in ``p``."""
    joint = multiply(embed(phi, [0], 2), relaxation_form(t, params, c0))
    return marginalize(joint, [0])


def relaxed_representation(phi: QuadForm, params: ModelParams, c0: float = 1.0) -> QuadForm:
    """
    Conjugated picture of a momentum-space state.

    Multiplies by ``exp{-(i/hbar) q^2/(2k)}`` and convolves with
    ``(pi hbar k)^(-1/2) exp{(i/hbar)(q - q')^2/k}``; in this picture the relaxation
    evolution is the dilation ``psi(q) -> e^(-beta t/2) psi(e^(-beta t) q)``.
    """
    p1 = params.dof(0)
    k = c0 * float(p1.beta[0]) * p1.m[0]
    chirped = QuadForm(phi.M - 1.0 / k, phi.B, phi.c, phi.log_scale, phi.hbar)
    conv = QuadForm(
        (2.0 / k) * np.array([[1.0, -1.0], [-1.0, 1.0]]),
        np.zeros(2),
        0j,
        -0.5 * math.log(math.pi * phi.hbar * k) - 1j * math.pi / 4.0,
        phi.hbar,
    )
    return marginalize(multiply(embed(chirped, [0], 2), conv), [0])


def relaxation_decay(
    phi: QuadForm, t: float, params: ModelParams, c0: float = 1.0
) -> tuple[float, float]:
    """Norm and gradient norm of the relaxed representation after time ``t >= 0``."""
    if not math.isfinite(t) or t < 0.0:
        raise NonpositiveDuration(f"relaxation time must be finite and >= 0, got {t}")
    if t > 0.0:
        phi = evolve_momentum(phi, t, params, c0)
    psi = relaxed_representation(phi, params, c0)
    return l2_norm(psi), gradient_norm(psi)
