from __future__ import annotations

import cmath
import math

import numpy as np
import pytest

from subquantum_sim.contracts import InvariantViolation
from subquantum_sim.detqm import detqm_transport
from subquantum_sim.evolution import (
    GaussianState,
    SlitSpec,
    Superposition,
    concentration,
    concentration_bound,
    density_ip1,
    density_ip2,
    dispersion_qm,
    dispersion_subqm,
    fringe_visibility,
    hamiltonian_ratio,
    iterated_slits,
    pipeline_kappa,
    position_amplitude,
    position_width_sq,
    probability_ip1,
    probability_ip2,
    propagate,
    propagate_via_kernel,
    qm_apply_slit,
    qm_propagate,
    qm_wavefunction,
)
from subquantum_sim.kernels import ModelParams
from subquantum_sim.quadratics import l2_norm, moments

POINTS = np.array([[0.0, 0.0], [0.4, -0.3], [-1.1, 0.8], [1.5, 1.2]])


def _packet(params: ModelParams) -> GaussianState:
    return GaussianState.product(params, x0=0.3, p0=-0.2, dx=1.0, dp=0.8, k=0.4)


def test_product_state_widths(natural: ModelParams) -> None:
    rep = concentration(GaussianState.product(natural, x0=1.0, p0=2.0, dx=0.5, dp=0.7))
    assert rep.dx == pytest.approx(0.5)
    assert rep.dp == pytest.approx(0.7)
    assert rep.kappa == pytest.approx(0.7)
    assert rep.center_x == pytest.approx(1.0)
    assert rep.center_p == pytest.approx(2.0)
    assert rep.is_concentrated


def test_state_shape_checks(natural: ModelParams) -> None:
    with pytest.raises(InvariantViolation, match="GS-003"):
        GaussianState.product(natural, dx=-1.0)
    with pytest.raises(InvariantViolation, match="GS-001"):
        GaussianState.product(ModelParams.natural(2), dx=[1.0, 2.0, 3.0])
    other = GaussianState.product(ModelParams.from_tau(1.0, 2.0), dx=1.0)
    with pytest.raises(InvariantViolation, match="GS-004"):
        Superposition(((1.0, GaussianState.product(natural, dx=1.0)), (1.0, other)))


@pytest.mark.parametrize("T", [0.1, 2.0, 25.0])
def test_propagation_is_unitary(natural: ModelParams, T: float) -> None:
    s = _packet(natural)
    out = propagate(s, T)
    assert isinstance(out, GaussianState)
    assert out.t == pytest.approx(T)
    assert l2_norm(out.form) == pytest.approx(l2_norm(s.form), rel=1e-9)


def test_propagate_matches_kernel_integral(natural: ModelParams) -> None:
    s = _packet(natural)
    a = propagate(s, 1.3)
    b = propagate_via_kernel(s, 1.3)
    assert isinstance(a, GaussianState)
    assert np.allclose(a.form.evaluate(POINTS), b.form.evaluate(POINTS), rtol=1e-9)


def test_semigroup(natural: ModelParams) -> None:
    s = _packet(natural)
    two = propagate(propagate(s, 0.5), 0.8)
    one = propagate(s, 1.3)
    assert isinstance(one, GaussianState) and isinstance(two, GaussianState)
    assert np.allclose(two.form.evaluate(POINTS), one.form.evaluate(POINTS), rtol=1e-8)


def test_two_degrees_of_freedom_factorize() -> None:
    params = ModelParams.create([1.0, 2.0], [1.0, 0.3])
    s = GaussianState.product(params, x0=[0.1, -0.2], dx=[1.0, 0.5], dp=[0.7, 1.2])
    out = propagate(s, 0.9)
    assert isinstance(out, GaussianState)
    for i in range(2):
        single = GaussianState.product(
            params.dof(i), x0=[0.1, -0.2][i], dx=[1.0, 0.5][i], dp=[0.7, 1.2][i]
        )
        part = propagate(single, 0.9)
        assert isinstance(part, GaussianState)
        assert concentration(out, dof=i).dx == pytest.approx(concentration(part).dx, rel=1e-9)


def test_relaxed_state_decays_without_phase() -> None:
    params = ModelParams.from_tau(1.0, 2.0)
    s = GaussianState.relaxed(params)
    out = propagate(s, 3.0)
    assert isinstance(out, GaussianState)
    assert np.allclose(out.form.M, s.form.M, atol=1e-10)
    assert np.allclose(out.form.B, 0.0, atol=1e-10)
    # e^{-beta T / 2} with beta = 0.5
    assert cmath.exp(out.form.log_scale) == pytest.approx(math.exp(-0.75), rel=1e-10)
    ratio = hamiltonian_ratio(s, POINTS)
    assert np.allclose(ratio, -0.25j, atol=1e-12)


def test_relaxed_plane_wave_runs_late(natural: ModelParams) -> None:
    k, T = 0.5, 20.0
    out = propagate(GaussianState.relaxed(natural, k=k), T)
    assert isinstance(out, GaussianState)
    chi = position_amplitude(out)
    assert abs(chi.M[0, 0]) < 1e-8
    assert chi.B[0].real == pytest.approx(k)
    t_eff = -2.0 * chi.c.real / k**2
    assert t_eff == pytest.approx(T - 0.5, rel=1e-4)


def test_interference_rules_differ(natural: ModelParams) -> None:
    sup = Superposition(
        tuple((1.0 + 0j, GaussianState.relaxed(natural, k=kk)) for kk in (0.5, -0.5))
    )
    out = propagate(sup, 20.0)
    xs = np.linspace(0.0, 4.0 * math.pi, 2001)
    assert fringe_visibility(density_ip2(out, xs)) > 0.999
    assert fringe_visibility(density_ip1(out, xs, p_window=10.0)) < 1e-6


def test_window_probabilities(natural: ModelParams) -> None:
    s = GaussianState.product(natural, x0=0.5, dx=1.0, dp=1.0)
    assert probability_ip2(s, -50.0, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert probability_ip1(s, -50.0, 0.5) == pytest.approx(0.5, abs=1e-8)
    sup = Superposition(
        (
            (1.0 + 0j, GaussianState.product(natural, x0=-2.0, dx=1.0, dp=1.0)),
            (1.0 + 0j, GaussianState.product(natural, x0=2.0, dx=1.0, dp=1.0)),
        )
    )
    assert probability_ip2(sup, -1e3, 1e3) == pytest.approx(1.0, abs=1e-9)
    assert probability_ip2(sup, -1e3, 0.0) == pytest.approx(0.5, abs=1e-6)


def test_fringe_visibility() -> None:
    assert fringe_visibility([1.0, 3.0, 2.0]) == pytest.approx(0.5)
    assert fringe_visibility([0.0, 0.0]) == 0.0


def test_short_time_dispersion_identity() -> None:
    params = ModelParams.from_tau(1.0, 10.0)
    dx2, dp2, T = 0.3, 0.2, 1.0
    s = GaussianState.product(params, dx=math.sqrt(dx2), dp=math.sqrt(dp2))
    out = propagate(s, T, "short_time")
    assert isinstance(out, GaussianState)
    assert position_width_sq(out) == pytest.approx(dispersion_subqm(dx2, dp2, T, params), rel=1e-9)


def test_standard_qm_spreading() -> None:
    psi = qm_wavefunction(0.0, 0.4, k=1.0)
    out = qm_propagate(psi, 2.0, 1.0)
    _, cov = moments(out)
    assert 2.0 * cov[0, 0] == pytest.approx(dispersion_qm(0.16, 2.0, 1.0), rel=1e-10)
    assert l2_norm(out) == pytest.approx(l2_norm(psi), rel=1e-10)
    slit = qm_apply_slit(out, SlitSpec(0.0, 0.1))
    assert l2_norm(slit) < l2_norm(out)


def test_pipeline_matches_closed_form() -> None:
    params = ModelParams.from_tau(1.0, 10.0)
    T = 2.0
    flat = GaussianState.product(params)
    d1, d2 = 0.05, 0.08
    out = iterated_slits(flat, [SlitSpec(0.0, d1), SlitSpec(0.0, d2)], T, "short_time")
    assert isinstance(out, GaussianState)
    assert concentration(out).kappa == pytest.approx(pipeline_kappa(d1, d2, T, params), rel=1e-9)


def test_equilibrated_slits_reach_beta_t_squared() -> None:
    params = ModelParams.from_tau(1.0, 10.0)
    T = 2.0
    bt = 0.2
    delta = (bt**4 * T**2 / 18.0) ** 0.25
    kappa = pipeline_kappa(delta, delta, T, params)
    assert kappa == pytest.approx(2.0 * math.sqrt(2.0) / 3.0 * bt**2, rel=1e-12)
    assert kappa == pytest.approx(bt**2, rel=0.1)


def test_iterated_slits_validates_gaps(natural: ModelParams) -> None:
    flat = GaussianState.product(natural)
    with pytest.raises(InvariantViolation, match="SLT-002"):
        iterated_slits(flat, [], 1.0)
    with pytest.raises(InvariantViolation, match="SLT-002"):
        iterated_slits(flat, [SlitSpec(0.0, 0.1)] * 3, [1.0])
    with pytest.raises(InvariantViolation, match="SLT-001"):
        SlitSpec(0.0, 0.0)


def test_concentration_bound(natural: ModelParams) -> None:
    s = GaussianState.product(natural, dx=0.5, dp=0.7)
    assert concentration_bound(s, 0.5, 0.7) == pytest.approx(0.0, abs=1e-12)
    assert concentration_bound(s, 1.0, 1.4) > 0.0
    assert concentration_bound(s, 0.25, 0.7) < 0.0


def test_generator_matches_time_derivative(natural: ModelParams) -> None:
    s = _packet(natural)
    t, h = 1.0, 1e-4
    mid, fwd, bwd = (propagate(s, v) for v in (t, t + h, t - h))
    assert isinstance(mid, GaussianState)
    assert isinstance(fwd, GaussianState) and isinstance(bwd, GaussianState)
    dlog = (fwd.form.log_evaluate(POINTS) - bwd.form.log_evaluate(POINTS)) / (2.0 * h)
    want = 1j * natural.hbar * dlog
    got = hamiltonian_ratio(mid, POINTS)
    assert np.allclose(got, want, rtol=1e-5, atol=1e-6)


def test_vanishing_beta_is_deterministic_transport() -> None:
    params = ModelParams.from_tau(1.0, 1e3)
    s = GaussianState.product(params, x0=0.2, p0=0.5, dx=1.0, dp=1.0)
    sub = propagate(s, 1.0)
    det = detqm_transport(s, 1.0)
    assert isinstance(sub, GaussianState)
    m1, c1 = moments(sub.form)
    m2, c2 = moments(det.form)
    assert np.allclose(m1, m2, rtol=1e-4, atol=1e-6)
    assert np.allclose(c1, c2, rtol=1e-4, atol=1e-6)
