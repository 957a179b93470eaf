"""
Correlated relaxation forces for ``n`` identical particles.

A common force couples all particles, so in the collective coordinates
``y = R^T x`` (``R`` orthogonal, last column ``n^-1/2 (1, ..., 1)``) the model
separates: the ``n - 1`` relative coordinates relax with ``a1`` and the mean
coordinate with ``a3 = a1 + n a2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from .contracts import InvalidCount, InvariantViolation, NonNormalizable, validate_rotation
from .evolution import GaussianState, propagate
from .kernels import ModelParams, Regime, classical_action
from .quadratics import FArray, QuadForm, transform

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrfParams:
    n: int
    m: float
    a0: float
    a1: float
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise InvalidCount(f"particle count must be >= 1, got {self.n}")
        for name in ("m", "a0", "a1", "hbar"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise InvariantViolation(f"CRF-003 {name} must be finite and > 0, got {v}")

    @property
    def a2(self) -> float:
        return -(self.a1**2) / (self.a0 + self.n * self.a1)

    @property
    def a3(self) -> float:
        return self.a0 / (self.n + self.a0 / self.a1)

    @property
    def tau0(self) -> float:
        return math.sqrt(self.a0 * self.m)

    @property
    def tau1(self) -> float:
        return math.sqrt(self.a1 * self.m)

    @property
    def tau3(self) -> float:
        return math.sqrt(self.a3 * self.m)

    @property
    def beta1(self) -> float:
        return 1.0 / self.tau1

    @property
    def beta3(self) -> float:
        return 1.0 / self.tau3

    @property
    def regime_ok(self) -> bool:
        return self.tau0 / self.tau1 <= 0.1

    def model_params(self) -> ModelParams:
        """Parameters of the separated problem in collective coordinates."""
        return ModelParams((self.m,) * self.n, (self.a1,) * (self.n - 1) + (self.a3,), self.hbar)

    def sector_params(self) -> tuple[ModelParams, ModelParams]:
        """One-degree-of-freedom parameters of a relative coordinate and of the mean coordinate."""
        return (
            ModelParams((self.m,), (self.a1,), self.hbar),
            ModelParams((self.m,), (self.a3,), self.hbar),
        )


def _helmert(n: int) -> FArray:
    R = np.zeros((n, n))
    for j in range(1, n):
        R[:j, j - 1] = 1.0 / math.sqrt(j * (j + 1))
        R[j, j - 1] = -j / math.sqrt(j * (j + 1))
    R[:, n - 1] = 1.0 / math.sqrt(n)
    return R


@dataclass(frozen=True, eq=False)
class RotationR:
    matrix: FArray

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    def phase_space(self) -> FArray:
        """``R`` acting on interleaved ``(p, x)`` pairs."""
        return np.kron(self.matrix, np.eye(2))


def build_rotation(n: int) -> RotationR:
    if int(n) != n or n < 2:
        raise InvalidCount(f"collective rotation needs n >= 2, got {n}")
    R = _helmert(int(n))
    validate_rotation(R)
    return RotationR(R)


def _rotation_for(n: int) -> FArray:
    return np.ones((1, 1)) if n == 1 else build_rotation(n).matrix


def to_collective(form: QuadForm, n: int) -> QuadForm:
    """Form in collective coordinates: ``g(Y) = f(R Y)``."""
    return transform(form, np.kron(_rotation_for(n), np.eye(2)))


def from_collective(form: QuadForm, n: int) -> QuadForm:
    return transform(form, np.kron(_rotation_for(n), np.eye(2)).T)


def crf_action(
    X1: npt.ArrayLike,
    X2: npt.ArrayLike,
    T: float,
    params: CrfParams,
    route: Literal["collective", "deviation"] = "collective",
) -> FArray:
    """
    Classical action of the correlated model.

    Points have shape ``(..., n, 2)`` with ``(p, x)`` pairs.

    ``collective`` sums single-particle actions of the rotated coordinates;
    ``deviation`` sums relative actions of ``X_i - mean(X)`` plus ``n`` times the
    mean-coordinate action of ``mean(X)``. Both give the same value.
    """
    A1 = np.asarray(X1, dtype=np.float64)
    A2 = np.asarray(X2, dtype=np.float64)
    if A1.shape[-2] != params.n or A2.shape[-2] != params.n:
        raise InvariantViolation(f"CRF-004 expected {params.n} particles on axis -2")
    rel, mean = params.sector_params()
    if route == "collective":
        R = _rotation_for(params.n)
        Y1 = np.einsum("ij,...ik->...jk", R, A1)
        Y2 = np.einsum("ij,...ik->...jk", R, A2)
        total = classical_action(Y1[..., -1, :], Y2[..., -1, :], T, mean)
        for j in range(params.n - 1):
            total = total + classical_action(Y1[..., j, :], Y2[..., j, :], T, rel)
        return total
    if route == "deviation":
        c1 = A1.mean(axis=-2, keepdims=True)
        c2 = A2.mean(axis=-2, keepdims=True)
        total = params.n * classical_action(c1[..., 0, :], c2[..., 0, :], T, mean)
        for i in range(params.n):
            d1 = A1[..., i, :] - c1[..., 0, :]
            d2 = A2[..., i, :] - c2[..., 0, :]
            total = total + classical_action(d1, d2, T, rel)
        return total
    raise ValueError(f"unknown route {route!r}")


def crf_propagate(
    state: GaussianState, T: float, params: CrfParams, regime: Regime = "exact"
) -> GaussianState:
    """Propagate an ``n``-particle state: rotate, evolve each collective coordinate, rotate back."""
    if state.n != params.n:
        raise InvariantViolation(f"CRF-004 state has {state.n} particles, parameters {params.n}")
    collective = GaussianState(to_collective(state.form, params.n), params.model_params(), state.t)
    moved = propagate(collective, T, regime)
    assert isinstance(moved, GaussianState)
    return state.replace(from_collective(moved.form, params.n), state.t + T)


def correlated_state(
    params: CrfParams,
    *,
    dx: float,
    dp: float,
    mean_dx: float | None = None,
    mean_dp: float | None = None,
    x0: float = 0.0,
    p0: float = 0.0,
) -> GaussianState:
    """
    State whose relative coordinates have amplitude widths ``(dx, dp)``.

    The mean coordinate is centred at ``(p0, x0)`` with its own widths (flat when
    ``None``); the result is expressed in particle coordinates.
    """
    n = params.n
    mp = params.model_params()
    dxs: list[float | None] = [dx] * (n - 1) + [mean_dx]
    dps: list[float | None] = [dp] * (n - 1) + [mean_dp]
    hbar = params.hbar
    M = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    B = np.zeros(2 * n, dtype=np.complex128)
    c = 0j
    centres = [(0.0, 0.0)] * (n - 1) + [(math.sqrt(n) * p0, math.sqrt(n) * x0)]
    for j in range(n):
        slots = ((2 * j, dps[j], centres[j][0]), (2 * j + 1, dxs[j], centres[j][1]))
        for idx, width, centre in slots:
            if width is None:
                continue
            M[idx, idx] += 1j * hbar / width**2
            B[idx] += -1j * hbar * centre / width**2
            c += 1j * hbar * centre**2 / (2.0 * width**2)
    collective = QuadForm(M, B, c, 0j, hbar)
    return GaussianState(from_collective(collective, n), mp)


@dataclass(frozen=True)
class CorrelationReport:
    dx_rel: float
    dp_rel: float
    kappa_rel: float
    is_correlated: bool
    envelope_margin: float
    envelope_ok: bool


def correlated_check(state: GaussianState, dx: float, dp: float) -> CorrelationReport:
    """
    Concentration of the relative sector and the envelope bound
    ``|psi| <= C exp{-1/2 sum (x_i - xbar)^2/dx^2 - 1/2 sum (p_i - pbar)^2/dp^2}``.
    """
    n = state.n
    if n < 2:
        raise InvalidCount("relative sector needs n >= 2")
    form = to_collective(state.form, n)
    P = form.M.imag / form.hbar
    rel = list(range(2 * (n - 1)))
    mean = [2 * (n - 1), 2 * (n - 1) + 1]
    if float(np.min(np.linalg.eigvalsh(P))) < -1e-10 * max(1.0, float(np.max(np.abs(P)))):
        raise NonNormalizable("amplitude grows in some direction")
    Prr = P[np.ix_(rel, rel)]
    Prm = P[np.ix_(rel, mean)]
    Pmm = P[np.ix_(mean, mean)]
    eff = Prr - Prm @ np.linalg.pinv(Pmm) @ Prm.T
    eff = 0.5 * (eff + eff.T)
    w, V = np.linalg.eigh(eff)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    good = w > tol
    C = (V[:, good] / w[good]) @ V[:, good].T
    widths = np.sqrt(np.maximum(np.diag(C), 0.0))
    null = V[:, ~good]
    if null.size:
        touched = np.any(np.abs(null) > 1e-8, axis=1)
        widths = np.where(touched, np.inf, widths)
    dx_rel = float(np.max(widths[1::2]))
    dp_rel = float(np.max(widths[0::2]))
    kappa = 2.0 * dx_rel * dp_rel / form.hbar
    bound = np.zeros(len(rel))
    bound[0::2] = 1.0 / dp**2
    bound[1::2] = 1.0 / dx**2
    margin = float(np.min(np.linalg.eigvalsh(eff - np.diag(bound))))
    return CorrelationReport(
        dx_rel=dx_rel,
        dp_rel=dp_rel,
        kappa_rel=kappa,
        is_correlated=bool(kappa < 1.0),
        envelope_margin=margin,
        envelope_ok=margin >= -1e-9 * max(1.0, float(np.max(bound))),
    )
