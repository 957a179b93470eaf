"""
Gaussian states of the subquantum relaxation model and their evolution.

States are :class:`~subquantum_sim.quadratics.QuadForm` objects over the
interleaved phase-space variables ``(p_0, x_0, p_1, x_1, ...)``. Propagation,
slits and both measurement rules (momentum integrated before squaring, or
after) stay inside the Gaussian calculus, so every result is exact up to
floating point.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import integrate, stats

from .contracts import InvariantViolation, NonNormalizable
from .kernels import ModelParams, Regime, build_kernel, qm_free_kernel
from .quadratics import (
    CArray,
    FArray,
    QuadForm,
    adjugate_inverse_2x2,
    conjugate,
    embed,
    log_det_minus_i,
    marginalize,
    moments,
    multiply,
    solve_block,
)

logger = logging.getLogger(__name__)

PotentialFn = Callable[[FArray], FArray]


@dataclass(frozen=True)
class SlitSpec:
    """
    Gaussian aperture ``exp{-(x - center)^2 / (2 half_width^2)}``.

    Scaled to integrate to ``2 half_width``.
    """

    center: float
    half_width: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.half_width) and self.half_width > 0.0):
            raise InvariantViolation(f"SLT-001 half_width must be > 0, got {self.half_width}")
        if not math.isfinite(self.center):
            raise InvariantViolation("SLT-001 center must be finite")


@dataclass(frozen=True, eq=False)
class GaussianState:
    form: QuadForm
    params: ModelParams
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.form.dim != 2 * self.params.n:
            raise InvariantViolation(
                f"GS-001 state over {self.form.dim} variables "
                f"for {self.params.n} degrees of freedom"
            )
        if not math.isclose(self.form.hbar, self.params.hbar, rel_tol=1e-12):
            raise InvariantViolation("GS-002 form and parameters disagree on hbar")

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def p_indices(self) -> list[int]:
        return [2 * i for i in range(self.n)]

    @property
    def x_indices(self) -> list[int]:
        return [2 * i + 1 for i in range(self.n)]

    def replace(self, form: QuadForm, t: float | None = None) -> GaussianState:
        return GaussianState(form, self.params, self.t if t is None else t)

    @classmethod
    def product(
        cls,
        params: ModelParams,
        *,
        x0: float | Sequence[float] = 0.0,
        p0: float | Sequence[float] = 0.0,
        dx: float | Sequence[float] | None = None,
        dp: float | Sequence[float] | None = None,
        k: float | Sequence[float] = 0.0,
        t: float = 0.0,
    ) -> GaussianState:
        """
        Product of Gaussian amplitudes in ``x`` and ``p`` per degree of freedom.

        ``dx=None`` (or ``dp=None``) leaves that variable flat; ``k`` adds the plane-wave
        phase ``exp{(i/hbar) k x}``.
        """
        n = params.n
        hbar = params.hbar
        xs, ps, ks = _per_dof(x0, n), _per_dof(p0, n), _per_dof(k, n)
        dxs = None if dx is None else _per_dof(dx, n)
        dps = None if dp is None else _per_dof(dp, n)
        M = np.zeros((2 * n, 2 * n), dtype=np.complex128)
        B = np.zeros(2 * n, dtype=np.complex128)
        c = 0j
        for i in range(n):
            B[2 * i + 1] += ks[i]
            for idx, center, width in (
                (2 * i + 1, xs[i], None if dxs is None else dxs[i]),
                (2 * i, ps[i], None if dps is None else dps[i]),
            ):
                if width is None:
                    continue
                if width <= 0.0:
                    raise InvariantViolation(f"GS-003 widths must be > 0, got {width}")
                M[idx, idx] += 1j * hbar / width**2
                B[idx] += -1j * hbar * center / width**2
                c += 1j * hbar * center**2 / (2.0 * width**2)
        return cls(QuadForm(M, B, c, 0j, hbar), params, t)

    @classmethod
    def relaxed(
        cls,
        params: ModelParams,
        k: float | Sequence[float] = 0.0,
        l: float | Sequence[float] = 0.0,  # noqa: E741
        t: float = 0.0,
    ) -> GaussianState:
        """``exp{(i/hbar)(p^2/(2 beta m) + l p + k x)}`` per degree of freedom."""
        n = params.n
        ks, ls = _per_dof(k, n), _per_dof(l, n)
        bm = params.beta * params.masses
        M = np.zeros((2 * n, 2 * n), dtype=np.complex128)
        B = np.zeros(2 * n, dtype=np.complex128)
        for i in range(n):
            M[2 * i, 2 * i] = 1.0 / bm[i]
            B[2 * i] = ls[i]
            B[2 * i + 1] = ks[i]
        return cls(QuadForm(M, B, 0j, 0j, params.hbar), params, t)


@dataclass(frozen=True, eq=False)
class Superposition:
    """Finite linear combination of Gaussian states sharing parameters."""

    terms: tuple[tuple[complex, GaussianState], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.terms:
            raise InvariantViolation("GS-004 superposition needs at least one term")
        p0 = self.terms[0][1].params
        if any(s.params != p0 for _, s in self.terms):
            raise InvariantViolation("GS-004 superposed states must share parameters")

    @property
    def params(self) -> ModelParams:
        return self.terms[0][1].params

    def map(self, fn: Callable[[GaussianState], GaussianState]) -> Superposition:
        return Superposition(tuple((w, fn(s)) for w, s in self.terms))


AnyState = GaussianState | Superposition


def _per_dof(v: float | Sequence[float], n: int) -> list[float]:
    if isinstance(v, (int, float)):
        return [float(v)] * n
    vals = [float(u) for u in v]
    if len(vals) != n:
        raise InvariantViolation(f"GS-001 expected {n} values, got {len(vals)}")
    return vals


def propagate(state: AnyState, T: float, regime: Regime = "exact") -> AnyState:
    """
    Closed-form propagation by ``T``.

    With ``A = M1 + Qin`` the result is ``M = Qout - Qtr^T A^-1 Qtr``,
    ``B = -Qtr^T A^-1 B1``, ``c = c1 - 1/2 B1^T A^-1 B1``.
    """
    if isinstance(state, Superposition):
        return state.map(lambda s: _propagate_one(s, T, regime))
    return _propagate_one(state, T, regime)


def _propagate_one(state: GaussianState, T: float, regime: Regime) -> GaussianState:
    kern = build_kernel(T, state.params, regime)
    f = state.form
    A = f.M + kern.Qin
    rhs = np.concatenate([kern.Qtr, f.B[:, None]], axis=1)
    if state.n == 1:
        sol = adjugate_inverse_2x2(A) @ rhs
    else:
        sol = solve_block(A, rhs)
    Ainv_Qtr = sol[:, :-1]
    Ainv_B = sol[:, -1]
    M = kern.Qout - kern.Qtr.T @ Ainv_Qtr
    B = -kern.Qtr.T @ Ainv_B
    c = f.c - 0.5 * complex(f.B @ Ainv_B)
    log_scale = (
        f.log_scale
        + kern.log_prefactor
        + state.n * math.log(2.0 * math.pi * f.hbar)
        - 0.5 * log_det_minus_i(A)
    )
    return state.replace(QuadForm(M, B, c, log_scale, f.hbar), state.t + T)


def propagate_via_kernel(state: GaussianState, T: float, regime: Regime = "exact") -> GaussianState:
    """Same result as :func:`propagate`, by integrating the joint kernel form."""
    kern = build_kernel(T, state.params, regime)
    d = 2 * state.n
    joint = multiply(embed(state.form, list(range(d)), 2 * d), kern.joint_form())
    return state.replace(marginalize(joint, list(range(d))), state.t + T)


def apply_slit(state: AnyState, slit: SlitSpec, dof: int = 0) -> AnyState:
    if isinstance(state, Superposition):
        return state.map(lambda s: _slit_one(s, slit, dof))
    return _slit_one(state, slit, dof)


def _slit_one(state: GaussianState, slit: SlitSpec, dof: int) -> GaussianState:
    f = state.form
    hbar = f.hbar
    i = 2 * dof + 1
    inv = 1.0 / slit.half_width**2
    M = f.M.copy()
    B = f.B.copy()
    M[i, i] += 1j * hbar * inv
    B[i] += -1j * hbar * slit.center * inv
    c = f.c + 1j * hbar * slit.center**2 * inv / 2.0
    log_scale = f.log_scale + 0.5 * math.log(2.0 / math.pi)
    return state.replace(QuadForm(M, B, c, log_scale, hbar))


def iterated_slits(
    state: AnyState,
    slits: Sequence[SlitSpec],
    T: float | Sequence[float],
    regime: Regime = "exact",
    dof: int = 0,
) -> AnyState:
    """Apply ``slits[0]``, then alternately propagate and apply the next slit."""
    if not slits:
        raise InvariantViolation("SLT-002 need at least one slit")
    gaps = [float(T)] * (len(slits) - 1) if isinstance(T, (int, float)) else [float(v) for v in T]
    if len(gaps) != len(slits) - 1:
        raise InvariantViolation(f"SLT-002 {len(slits)} slits need {len(slits) - 1} gaps")
    out = apply_slit(state, slits[0], dof)
    for gap, slit in zip(gaps, slits[1:]):
        out = apply_slit(propagate(out, gap, regime), slit, dof)
        logger.debug("slit at %g after %g", slit.center, gap)
    return out


def position_amplitude(state: GaussianState) -> QuadForm:
    """``chi(x) = int psi(x, p) dp`` over every momentum."""
    return marginalize(state.form, state.p_indices)


def _points(xs: npt.ArrayLike, n: int) -> FArray:
    X = np.asarray(xs, dtype=np.float64)
    if n == 1 and (X.ndim == 1 or X.shape[-1] != 1):
        X = X[..., None]
    return X


def _amplitude_values(state: AnyState, xs: npt.ArrayLike) -> CArray:
    if isinstance(state, Superposition):
        X = _points(xs, state.params.n)
        total = np.zeros(X.shape[:-1], dtype=np.complex128)
        for w, s in state.terms:
            total += w * position_amplitude(s).evaluate(X)
        return total
    return position_amplitude(state).evaluate(_points(xs, state.n))


def density_ip2(state: AnyState, xs: npt.ArrayLike) -> FArray:
    """Position density with momentum integrated at amplitude level, ``|int psi dp|^2``."""
    return np.abs(_amplitude_values(state, xs)) ** 2


def density_ip1(state: AnyState, xs: npt.ArrayLike, p_window: float | None = None) -> FArray:
    """
    Position density ``int |psi(x, p)|^2 dp``.

    ``p_window`` applies the weight ``exp{-p^2/(2 p_window^2)}`` before integrating,
    which is needed when ``|psi|^2`` is flat in momentum.
    """
    terms = state.terms if isinstance(state, Superposition) else ((1.0 + 0j, state),)
    n = terms[0][1].n
    X = _points(xs, n)
    reg = 0.0 if p_window is None else terms[0][1].params.hbar / p_window**2
    total = np.zeros(X.shape[:-1], dtype=np.complex128)
    for wj, sj in terms:
        for wl, sl in terms:
            pair = multiply(sj.form, conjugate(sl.form))
            reduced = marginalize(pair, sj.p_indices, regularize=reg)
            total += wj * np.conj(wl) * reduced.evaluate(X)
    return np.maximum(total.real, 0.0)


def _window_probability(
    density: Callable[[FArray], FArray], a: float, b: float, center: float, scale: float
) -> float:
    def f(x: float) -> float:
        return float(density(np.array([x]))[0])

    lo, hi = center - 40.0 * scale, center + 40.0 * scale
    total, _ = integrate.quad(f, lo, hi, limit=400, points=[center], epsabs=0.0, epsrel=1e-12)
    part, _ = integrate.quad(f, max(a, lo), min(b, hi), limit=400, epsabs=0.0, epsrel=1e-12)
    if total <= 0.0:
        raise NonNormalizable("position density integrates to zero")
    return part / total if b > a else 0.0


def _density_scale(state: AnyState) -> tuple[float, float]:
    means, sigmas = [], []
    terms = state.terms if isinstance(state, Superposition) else ((1.0, state),)
    for _, s in terms:
        mu, cov = moments(position_amplitude(s))
        means.append(float(mu[0]))
        sigmas.append(math.sqrt(float(cov[0, 0])))
    return float(np.mean(means)), max(sigmas) + float(np.ptp(means))


def probability_ip2(state: AnyState, a: float, b: float) -> float:
    """Probability of ``a < x < b`` for a one-degree-of-freedom state."""
    if isinstance(state, GaussianState):
        if state.n != 1:
            raise InvariantViolation("GS-001 probability needs one degree of freedom")
        mu, cov = moments(position_amplitude(state))
        sd = math.sqrt(float(cov[0, 0]))
        return float(stats.norm.cdf(b, mu[0], sd) - stats.norm.cdf(a, mu[0], sd))
    center, scale = _density_scale(state)
    return _window_probability(lambda x: density_ip2(state, x), a, b, center, scale)


def probability_ip1(state: AnyState, a: float, b: float, p_window: float | None = None) -> float:
    center, scale = _density_scale(state)
    return _window_probability(lambda x: density_ip1(state, x, p_window), a, b, center, scale)


def fringe_visibility(values: npt.ArrayLike) -> float:
    v = np.asarray(values, dtype=np.float64)
    hi, lo = float(np.max(v)), float(np.min(v))
    return 0.0 if hi + lo == 0.0 else (hi - lo) / (hi + lo)


@dataclass(frozen=True)
class ConcentrationReport:
    dx: float
    dp: float
    kappa: float
    center_x: float
    center_p: float
    is_concentrated: bool


def amplitude_widths(state: GaussianState) -> tuple[FArray, FArray]:
    """Amplitude widths ``(dx, dp)`` per degree of freedom; ``width^2 = 2 Var(|psi|^2)``."""
    _, cov = moments(state.form)
    diag = np.diag(cov)
    return np.sqrt(2.0 * diag[state.x_indices]), np.sqrt(2.0 * diag[state.p_indices])


def concentration(state: GaussianState, dof: int = 0) -> ConcentrationReport:
    mean, cov = moments(state.form)
    ip, ix = 2 * dof, 2 * dof + 1
    dx = math.sqrt(2.0 * float(cov[ix, ix]))
    dp = math.sqrt(2.0 * float(cov[ip, ip]))
    kappa = 2.0 * dx * dp / state.params.hbar
    return ConcentrationReport(
        dx=dx,
        dp=dp,
        kappa=kappa,
        center_x=float(mean[ix]),
        center_p=float(mean[ip]),
        is_concentrated=kappa < 1.0,
    )


def concentration_bound(state: GaussianState, dx: float, dp: float, dof: int = 0) -> float:
    """
    Margin of the envelope ``|psi| <= C exp{-(x - x0)^2/(2 dx^2) - (p - p0)^2/(2 dp^2)}``.

    Other degrees of freedom are maximised out. The bound holds iff the
    returned value is ``>= 0``.
    """
    if dx <= 0.0 or dp <= 0.0:
        raise InvariantViolation(f"GS-003 widths must be > 0, got {dx}, {dp}")
    P = state.form.M.imag / state.form.hbar
    P = 0.5 * (P + P.T)
    own = [2 * dof, 2 * dof + 1]
    rest = [i for i in range(state.form.dim) if i not in own]
    eff = P[np.ix_(own, own)]
    if rest:
        cross = P[np.ix_(own, rest)]
        eff = eff - cross @ np.linalg.pinv(P[np.ix_(rest, rest)]) @ cross.T
    return float(np.min(np.linalg.eigvalsh(eff - np.diag([1.0 / dp**2, 1.0 / dx**2]))))


def position_width_sq(state: GaussianState) -> float:
    """Squared amplitude width of ``chi(x) = int psi dp`` (one degree of freedom)."""
    _, cov = moments(position_amplitude(state))
    return 2.0 * float(cov[0, 0])


def dispersion_subqm(dx1_sq: float, dp1_sq: float, T: float, params: ModelParams) -> float:
    """Squared width of ``chi`` after ``T`` for a product Gaussian, short-time kernel."""
    m = params.m[0]
    beta = float(params.beta[0])
    s = dx1_sq + dp1_sq * T**2 / m**2
    return s + params.hbar**2 * (beta * T) ** 6 / (9.0 * beta**2 * m**2 * s)


def dispersion_qm(dx1_sq: float, T: float, m: float, hbar: float = 1.0) -> float:
    return dx1_sq + hbar**2 * T**2 / (m**2 * dx1_sq)


def pipeline_kappa(delta1: float, delta2: float, T: float, params: ModelParams) -> float:
    """Concentration after slit ``delta1``, short-time propagation by ``T`` and slit ``delta2``."""
    m = params.m[0]
    beta = float(params.beta[0])
    hbar = params.hbar
    dp2_sq = (m / T) ** 2 * (
        delta1**2 + delta2**2 + hbar**2 * (beta * T) ** 6 / (9.0 * delta1**2 * beta**2 * m**2)
    )
    return 2.0 * delta2 * math.sqrt(dp2_sq) / hbar


def qm_wavefunction(x0: float, dx: float, k: float = 0.0, hbar: float = 1.0) -> QuadForm:
    """Standard-QM Gaussian ``exp{-(x - x0)^2/(2 dx^2) + (i/hbar) k x}``."""
    return QuadForm(
        np.array([[1j * hbar / dx**2]]),
        np.array([-1j * hbar * x0 / dx**2 + k]),
        1j * hbar * x0**2 / (2.0 * dx**2),
        0j,
        hbar,
    )


def qm_propagate(psi: QuadForm, T: float, m: float) -> QuadForm:
    """Free Schroedinger evolution of a one-variable form by ``T``."""
    if psi.dim != 1:
        raise InvariantViolation("QF-001 standard-QM states have one variable")
    joint = multiply(embed(psi, [0], 2), qm_free_kernel(T, m, psi.hbar))
    return marginalize(joint, [0])


def qm_apply_slit(psi: QuadForm, slit: SlitSpec) -> QuadForm:
    slit_form = qm_wavefunction(slit.center, slit.half_width, 0.0, psi.hbar)
    return multiply(psi, slit_form.with_log_scale(0.5 * math.log(2.0 / math.pi)))


def hamiltonian_ratio(
    state: GaussianState,
    X: npt.ArrayLike,
    potential: PotentialFn | None = None,
    gradient: PotentialFn | None = None,
    *,
    diffusion: bool = True,
) -> CArray:
    """
    ``(H psi)/psi`` for the generator ``i hbar psi_t = H psi`` at phase-space points ``X``.

    ``H = sum_i [-p^2/2m - (hbar^2/2) m beta^2 d_p^2 - i hbar (p/m) d_x + i hbar V'(x) d_p] + V``;
    ``diffusion=False`` drops the ``d_p^2`` term, leaving the deterministic generator.
    """
    f = state.form
    hbar = f.hbar
    Xa = np.asarray(X, dtype=np.float64)
    g = (1j / hbar) * (Xa @ f.M + f.B)
    out = np.zeros(Xa.shape[:-1], dtype=np.complex128)
    beta = state.params.beta
    for i in range(state.n):
        ip, ix = 2 * i, 2 * i + 1
        m = state.params.m[i]
        p, x = Xa[..., ip], Xa[..., ix]
        out += -(p**2) / (2.0 * m) - 1j * hbar * (p / m) * g[..., ix]
        if diffusion:
            second = (1j / hbar) * f.M[ip, ip] + g[..., ip] ** 2
            out += -0.5 * hbar**2 * m * beta[i] ** 2 * second
        if potential is not None:
            out += potential(x)
        if gradient is not None:
            out += 1j * hbar * gradient(x) * g[..., ip]
    return out
