"""
Deterministic phase-space wave model.

A state is a complex function on an ``(x, p)`` grid for one degree of freedom.
It evolves along Hamiltonian characteristics, picking up the phase
``exp{(i/hbar) int (p H_p - H) dt}``:

    psi(X(t2), t2) = psi(X(t1), t1) exp{(i/hbar) S(t1 -> t2)}

The equivalent PDE is
``i psi_t = -p^2/(2 hbar m) psi - i (p/m) psi_x + i V'(x) psi_p + (V/hbar) psi``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from numpy.polynomial import Polynomial
from scipy.interpolate import RectBivariateSpline

from .contracts import (
    InvariantViolation,
    StepDiverged,
    SupportEscapedGrid,
    validate_grid_axes,
)
from .evolution import GaussianState
from .quadratics import CArray, FArray, QuadForm, moments, transform

logger = logging.getLogger(__name__)

try:
    from numba import njit, prange  # type: ignore

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False
    njit = None  # type: ignore
    prange = range  # type: ignore

PotentialFn = Callable[[FArray], FArray]
HamiltonianKind = Literal["free", "harmonic", "custom"]

# Relative norm loss tolerated before the grid is declared too small.
ESCAPE_TOL = 1e-3


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H = p^2/(2m) + V(x)``; custom potentials come as polynomial coefficients or callables."""

    kind: HamiltonianKind
    m: float
    omega: float = 0.0
    coeffs: tuple[float, ...] | None = None
    potential: PotentialFn | None = None
    gradient: PotentialFn | None = None
    curvature: PotentialFn | None = None
    max_step: float = 1e-3

    def __post_init__(self) -> None:
        if not (math.isfinite(self.m) and self.m > 0.0):
            raise InvariantViolation(f"HAM-001 mass must be > 0, got {self.m}")
        if self.kind == "harmonic" and not self.omega > 0.0:
            raise InvariantViolation("HAM-002 harmonic Hamiltonian needs omega > 0")
        if self.kind == "custom" and self.coeffs is None and (
            self.potential is None or self.gradient is None
        ):
            raise InvariantViolation(
                "HAM-003 custom Hamiltonian needs coeffs or potential+gradient"
            )
        if not self.max_step > 0.0:
            raise InvariantViolation("HAM-004 max_step must be > 0")

    @classmethod
    def free(cls, m: float) -> HamiltonianSpec:
        return cls("free", m)

    @classmethod
    def harmonic(cls, m: float, omega: float) -> HamiltonianSpec:
        return cls("harmonic", m, omega=omega)

    @classmethod
    def polynomial(
        cls, m: float, coeffs: tuple[float, ...], max_step: float = 1e-3
    ) -> HamiltonianSpec:
        """``V(x) = sum_k coeffs[k] x^k``."""
        return cls("custom", m, coeffs=tuple(float(c) for c in coeffs), max_step=max_step)

    def V(self, x: FArray) -> FArray:
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return 0.5 * self.m * self.omega**2 * x**2
        if self.coeffs is not None:
            return Polynomial(self.coeffs)(x)
        assert self.potential is not None
        return self.potential(x)

    def dV(self, x: FArray) -> FArray:
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return self.m * self.omega**2 * x
        if self.coeffs is not None:
            return Polynomial(self.coeffs).deriv()(x)
        assert self.gradient is not None
        return self.gradient(x)

    def d2V(self, x: FArray) -> FArray:
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return np.full_like(x, self.m * self.omega**2)
        if self.coeffs is not None:
            return Polynomial(self.coeffs).deriv(2)(x)
        if self.curvature is not None:
            return self.curvature(x)
        h = 1e-6 * (1.0 + np.abs(x))
        return (self.dV(x + h) - self.dV(x - h)) / (2.0 * h)


def _n_substeps(dt: float, max_step: float) -> int:
    n = max(2, math.ceil(abs(dt) / max_step))
    return n + (n % 2)


def _verlet_py(
    q: FArray, p: FArray, h: float, n: int, H: HamiltonianSpec
) -> tuple[FArray, FArray, FArray]:
    # Simpson weights 1, 4, 2, ..., 4, 1 on the substep nodes.
    def lag(qq: FArray, pp: FArray) -> FArray:
        return pp * pp / (2.0 * H.m) - H.V(qq)

    S = lag(q, p)
    force = -H.dV(q)
    for k in range(1, n + 1):
        p = p + 0.5 * h * force
        q = q + h * p / H.m
        force = -H.dV(q)
        p = p + 0.5 * h * force
        w = 1.0 if k == n else (4.0 if k % 2 == 1 else 2.0)
        S = S + w * lag(q, p)
    return q, p, S * h / 3.0


if _HAVE_NUMBA:

    @njit(parallel=True, cache=True)  # type: ignore[misc]
    def _verlet_poly_nb(
        q: np.ndarray, p: np.ndarray, coeffs: np.ndarray, m: float, h: float, n: int
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out_q = np.empty_like(q)
        out_p = np.empty_like(p)
        out_s = np.empty_like(q)
        deg = coeffs.shape[0]
        for i in prange(q.shape[0]):
            qi = q[i]
            pi = p[i]
            v = 0.0
            dv = 0.0
            for j in range(deg - 1, -1, -1):
                dv = dv * qi + v
                v = v * qi + coeffs[j]
            s = pi * pi / (2.0 * m) - v
            for k in range(1, n + 1):
                pi = pi - 0.5 * h * dv
                qi = qi + h * pi / m
                v = 0.0
                dv = 0.0
                for j in range(deg - 1, -1, -1):
                    dv = dv * qi + v
                    v = v * qi + coeffs[j]
                pi = pi - 0.5 * h * dv
                w = 1.0 if k == n else (4.0 if k % 2 == 1 else 2.0)
                s += w * (pi * pi / (2.0 * m) - v)
            out_q[i] = qi
            out_p[i] = pi
            out_s[i] = s * h / 3.0
        return out_q, out_p, out_s


def flow_action(
    q: npt.ArrayLike, p: npt.ArrayLike, t1: float, t2: float, H: HamiltonianSpec
) -> tuple[FArray, FArray, FArray]:
    """Image of ``(q, p)`` under the flow from ``t1`` to ``t2`` and the action along it."""
    q0 = np.asarray(q, dtype=np.float64)
    p0 = np.asarray(p, dtype=np.float64)
    dt = float(t2) - float(t1)
    if H.kind == "free":
        q2 = q0 + p0 * dt / H.m
        return q2, p0.copy(), p0 * p0 * dt / (2.0 * H.m)
    if H.kind == "harmonic":
        w = H.omega
        cs, sn = math.cos(w * dt), math.sin(w * dt)
        q2 = q0 * cs + p0 * sn / (H.m * w)
        p2 = p0 * cs - H.m * w * q0 * sn
        return q2, p2, 0.5 * (p2 * q2 - p0 * q0)
    n = _n_substeps(dt, H.max_step)
    h = dt / n
    shape = q0.shape
    if _HAVE_NUMBA and H.coeffs is not None:
        qf, pf, S = _verlet_poly_nb(
            q0.ravel().copy(), p0.ravel().copy(), np.asarray(H.coeffs, np.float64), H.m, h, n
        )
        q2, p2, S = qf.reshape(shape), pf.reshape(shape), S.reshape(shape)
    else:
        q2, p2, S = _verlet_py(q0, p0, h, n, H)
    if not (np.all(np.isfinite(q2)) and np.all(np.isfinite(p2)) and np.all(np.isfinite(S))):
        raise StepDiverged(f"characteristic integration diverged over dt={dt}")
    return q2, p2, S


def hamilton_flow(
    q: npt.ArrayLike, p: npt.ArrayLike, t1: float, t2: float, H: HamiltonianSpec
) -> tuple[FArray, FArray]:
    q2, p2, _ = flow_action(q, p, t1, t2, H)
    return q2, p2


def flow_jacobian(
    q: npt.ArrayLike, p: npt.ArrayLike, t1: float, t2: float, H: HamiltonianSpec
) -> FArray:
    """Tangent map ``d(q2, p2)/d(q1, p1)`` with shape ``(..., 2, 2)``."""
    q0 = np.asarray(q, dtype=np.float64)
    p0 = np.asarray(p, dtype=np.float64)
    dt = float(t2) - float(t1)
    J = np.zeros(q0.shape + (2, 2))
    if H.kind == "free":
        J[..., 0, 0] = 1.0
        J[..., 0, 1] = dt / H.m
        J[..., 1, 1] = 1.0
        return J
    if H.kind == "harmonic":
        w = H.omega
        cs, sn = math.cos(w * dt), math.sin(w * dt)
        J[..., 0, 0] = cs
        J[..., 0, 1] = sn / (H.m * w)
        J[..., 1, 0] = -H.m * w * sn
        J[..., 1, 1] = cs
        return J
    n = _n_substeps(dt, H.max_step)
    h = dt / n
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    qq, pp = q0.copy(), p0.copy()
    for _ in range(n):
        kick = np.zeros_like(J)
        kick[..., 0, 0] = 1.0
        kick[..., 1, 1] = 1.0
        kick[..., 1, 0] = -0.5 * h * H.d2V(qq)
        J = kick @ J
        pp = pp - 0.5 * h * H.dV(qq)
        qq = qq + h * pp / H.m
        J[..., 0, :] = J[..., 0, :] + (h / H.m) * J[..., 1, :]
        kick[..., 1, 0] = -0.5 * h * H.d2V(qq)
        J = kick @ J
        pp = pp - 0.5 * h * H.dV(qq)
    return J


@dataclass(frozen=True, eq=False)
class GridState:
    x: FArray
    p: FArray
    values: CArray
    t: float = 0.0
    hbar: float = 1.0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        validate_grid_axes(x, p)
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != (x.size, p.size):
            raise InvariantViolation(f"GRD-003 values shape {v.shape} != ({x.size}, {p.size})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "values", v)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    def mesh(self) -> tuple[FArray, FArray]:
        X, P = np.meshgrid(self.x, self.p, indexing="ij")
        return X, P

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.values) ** 2)) * self.dx * self.dp)

    def moments(self) -> tuple[FArray, FArray]:
        """Mean and covariance of ``|psi|^2`` in ``(p, x)`` order."""
        w = np.abs(self.values) ** 2
        total = float(np.sum(w))
        if total <= 0.0:
            raise SupportEscapedGrid("grid state is identically zero")
        X, P = self.mesh()
        mp = float(np.sum(w * P)) / total
        mx = float(np.sum(w * X)) / total
        cpp = float(np.sum(w * (P - mp) ** 2)) / total
        cxx = float(np.sum(w * (X - mx) ** 2)) / total
        cpx = float(np.sum(w * (P - mp) * (X - mx))) / total
        return np.array([mp, mx]), np.array([[cpp, cpx], [cpx, cxx]])

    def with_values(self, values: CArray, t: float | None = None) -> GridState:
        return GridState(self.x, self.p, values, self.t if t is None else t, self.hbar)

    @classmethod
    def from_gaussian(
        cls,
        state: GaussianState,
        nx: int = 256,
        n_p: int = 256,
        width: float = 8.0,
        span: tuple[tuple[float, float], tuple[float, float]] | None = None,
    ) -> GridState:
        """Sample a one-degree-of-freedom Gaussian state; the window is ``mean +/- width`` std."""
        if state.n != 1:
            raise InvariantViolation("GRD-004 grid states carry one degree of freedom")
        if span is None:
            mean, cov = moments(state.form)
            sp, sx = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
            span = (
                (mean[1] - width * sx, mean[1] + width * sx),
                (mean[0] - width * sp, mean[0] + width * sp),
            )
        x = np.linspace(span[0][0], span[0][1], nx)
        p = np.linspace(span[1][0], span[1][1], n_p)
        X, P = np.meshgrid(x, p, indexing="ij")
        vals = state.form.evaluate(np.stack([P, X], axis=-1))
        return cls(x, p, vals, state.t, state.params.hbar)


def _interpolate(state: GridState, xq: FArray, pq: FArray) -> CArray:
    re = RectBivariateSpline(state.x, state.p, state.values.real, kx=3, ky=3, s=0)
    im = RectBivariateSpline(state.x, state.p, state.values.imag, kx=3, ky=3, s=0)
    x0, x1 = state.x[0], state.x[-1]
    p0, p1 = state.p[0], state.p[-1]
    outside = (
        (xq < x0 - 0.5 * state.dx)
        | (xq > x1 + 0.5 * state.dx)
        | (pq < p0 - 0.5 * state.dp)
        | (pq > p1 + 0.5 * state.dp)
    )
    xc = np.clip(xq, x0, x1)
    pc = np.clip(pq, p0, p1)
    vals = re.ev(xc, pc) + 1j * im.ev(xc, pc)
    return np.where(outside, 0.0, vals)


def detqm_evolve(
    state: GridState, t1: float, t2: float, H: HamiltonianSpec, *, escape_tol: float = ESCAPE_TOL
) -> GridState:
    """Pull every node back along its characteristic and attach the action phase."""
    if t2 == t1:
        return state.with_values(state.values.copy(), t2)
    X, P = state.mesh()
    xb, pb, s_back = flow_action(X, P, t2, t1, H)
    vals = _interpolate(state, xb, pb) * np.exp(-1j * s_back / state.hbar)
    out = state.with_values(vals, t2)
    before, after = state.norm(), out.norm()
    if before > 0.0 and after < (1.0 - escape_tol) * before:
        raise SupportEscapedGrid(
            f"norm fell from {before:.6g} to {after:.6g}; enlarge the grid window"
        )
    logger.debug("detqm step %g -> %g norm %.12g -> %.12g", t1, t2, before, after)
    return out


def _d(values: CArray, h: float, axis: int) -> CArray:
    return np.gradient(values, h, axis=axis, edge_order=2)


def detqm_operator(state: GridState, H: HamiltonianSpec) -> CArray:
    """Right-hand side ``L psi`` of ``i psi_t = L psi`` with central differences."""
    X, P = state.mesh()
    psi = state.values
    hbar = state.hbar
    out = -(P**2) / (2.0 * hbar * H.m) * psi - 1j * (P / H.m) * _d(psi, state.dx, 0)
    if H.kind != "free":
        out = out + 1j * H.dV(X) * _d(psi, state.dp, 1) + H.V(X) / hbar * psi
    return out


def _time_step(state: GridState, H: HamiltonianSpec) -> float:
    X, _ = state.mesh()
    vmax = float(np.max(np.abs(state.p))) / H.m
    fmax = float(np.max(np.abs(H.dV(X))))
    bounds = []
    if vmax > 0.0:
        bounds.append(state.dx / vmax)
    if fmax > 0.0:
        bounds.append(state.dp / fmax)
    return 1e-3 * min(bounds) if bounds else 1e-6


def detqm_residual(state: GridState, H: HamiltonianSpec, interior: int = 2) -> float:
    """Grid L2 norm of ``i psi_t - L psi`` with ``psi_t`` from two short evolutions."""
    dt = _time_step(state, H)
    fwd = detqm_evolve(state, state.t, state.t + dt, H, escape_tol=1.0).values
    bwd = detqm_evolve(state, state.t, state.t - dt, H, escape_tol=1.0).values
    res = 1j * (fwd - bwd) / (2.0 * dt) - detqm_operator(state, H)
    core = res[interior:-interior, interior:-interior]
    return math.sqrt(float(np.sum(np.abs(core) ** 2)) * state.dx * state.dp)


def detqm_transport(state: GaussianState, T: float) -> GaussianState:
    """Exact free deterministic evolution: ``e^{(i/hbar) p^2 T/2m} psi(p, x - pT/m)``."""
    n = state.n
    S = np.eye(2 * n)
    M_phase = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    for i in range(n):
        m = state.params.m[i]
        S[2 * i + 1, 2 * i] = -T / m
        M_phase[2 * i, 2 * i] = T / m
    moved = transform(state.form, S)
    form = QuadForm(moved.M + M_phase, moved.B, moved.c, moved.log_scale, moved.hbar)
    return state.replace(form, state.t + T)


def apply_hard_slit(state: GridState, a: float, b: float) -> GridState:
    """Zero every column with ``x`` outside ``[a, b]``."""
    mask = ((state.x >= a) & (state.x <= b)).astype(np.float64)
    return state.with_values(state.values * mask[:, None])


def grid_summary(state: GridState) -> dict[str, Any]:
    mean, cov = state.moments()
    return {
        "t": state.t,
        "norm": state.norm(),
        "mean_p": float(mean[0]),
        "mean_x": float(mean[1]),
        "dp": math.sqrt(2.0 * cov[0, 0]),
        "dx": math.sqrt(2.0 * cov[1, 1]),
    }
