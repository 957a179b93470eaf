from __future__ import annotations

import math

import numpy as np
import pytest

from subquantum_sim.contracts import InvariantViolation, SupportEscapedGrid
from subquantum_sim.detqm import (
    GridState,
    HamiltonianSpec,
    apply_hard_slit,
    detqm_evolve,
    detqm_residual,
    detqm_transport,
    flow_action,
    flow_jacobian,
    grid_summary,
    hamilton_flow,
)
from subquantum_sim.evolution import GaussianState
from subquantum_sim.kernels import ModelParams


def _grid(natural: ModelParams, n: int = 128, width: float = 8.0) -> GridState:
    return GridState.from_gaussian(
        GaussianState.product(natural, dx=1.0, dp=1.0), nx=n, n_p=n, width=width
    )


def test_hamiltonian_guards() -> None:
    with pytest.raises(InvariantViolation, match="HAM-001"):
        HamiltonianSpec.free(0.0)
    with pytest.raises(InvariantViolation, match="HAM-002"):
        HamiltonianSpec("harmonic", 1.0)
    with pytest.raises(InvariantViolation, match="HAM-003"):
        HamiltonianSpec("custom", 1.0)


def test_harmonic_flow_is_periodic() -> None:
    H = HamiltonianSpec.harmonic(2.0, 1.5)
    q = np.array([0.3, -1.0, 2.0])
    p = np.array([1.0, 0.2, -0.4])
    q2, p2, S = flow_action(q, p, 0.0, 2.0 * math.pi / 1.5, H)
    assert np.allclose(q2, q, atol=1e-12)
    assert np.allclose(p2, p, atol=1e-12)
    assert np.allclose(S, 0.0, atol=1e-12)


def test_polynomial_flow_matches_harmonic() -> None:
    exact = HamiltonianSpec.harmonic(1.0, 1.0)
    numeric = HamiltonianSpec.polynomial(1.0, (0.0, 0.0, 0.5))
    q = np.array([0.5, -0.7])
    p = np.array([0.1, 1.2])
    qa, pa, Sa = flow_action(q, p, 0.0, 1.3, exact)
    qb, pb, Sb = flow_action(q, p, 0.0, 1.3, numeric)
    assert np.allclose(qa, qb, atol=1e-5)
    assert np.allclose(pa, pb, atol=1e-5)
    assert np.allclose(Sa, Sb, atol=1e-5)


@pytest.mark.parametrize(
    "H",
    [
        HamiltonianSpec.free(1.0),
        HamiltonianSpec.harmonic(1.0, 2.0),
        HamiltonianSpec.polynomial(1.0, (0.0, 0.0, 0.5, 0.0, 0.1)),
    ],
)
def test_flow_preserves_phase_space_volume(H: HamiltonianSpec) -> None:
    q = np.linspace(-1.0, 1.0, 5)
    p = np.linspace(0.5, -0.5, 5)
    J = flow_jacobian(q, p, 0.0, 0.8, H)
    assert np.allclose(np.linalg.det(J), 1.0, atol=1e-10)


def test_free_flow() -> None:
    q2, p2 = hamilton_flow(1.0, 2.0, 0.0, 0.5, HamiltonianSpec.free(4.0))
    assert float(q2) == pytest.approx(1.25)
    assert float(p2) == pytest.approx(2.0)


def test_full_period_returns_grid(natural: ModelParams) -> None:
    g = _grid(natural)
    H = HamiltonianSpec.harmonic(1.0, 1.0)
    out = detqm_evolve(g, 0.0, 2.0 * math.pi, H)
    before, after = grid_summary(g), grid_summary(out)
    assert after["t"] == pytest.approx(2.0 * math.pi)
    assert after["dx"] == pytest.approx(before["dx"], rel=1e-10)
    assert after["dp"] == pytest.approx(before["dp"], rel=1e-10)
    assert after["norm"] == pytest.approx(before["norm"], rel=1e-10)


def test_evolution_conserves_norm(natural: ModelParams) -> None:
    g = _grid(natural)
    out = detqm_evolve(g, 0.0, 1.0, HamiltonianSpec.harmonic(1.0, 1.0))
    assert out.norm() == pytest.approx(g.norm(), rel=1e-4)


def test_free_grid_evolution_matches_transport(natural: ModelParams) -> None:
    s = GaussianState.product(natural, dx=1.0, dp=1.0)
    g = GridState.from_gaussian(s, nx=128, n_p=128, width=8.0)
    out = detqm_evolve(g, 0.0, 0.5, HamiltonianSpec.free(1.0))
    X, P = out.mesh()
    want = detqm_transport(s, 0.5).form.evaluate(np.stack([P, X], axis=-1))
    assert np.allclose(out.values, want, atol=1e-4)


def test_phase_space_area_is_conserved(natural: ModelParams) -> None:
    g = _grid(natural)
    out = detqm_evolve(g, 0.0, 0.5, HamiltonianSpec.free(1.0))
    _, c0 = g.moments()
    _, c1 = out.moments()
    # the position marginal spreads, the phase-space area does not
    assert c1[1, 1] > c0[1, 1]
    assert np.linalg.det(c1) == pytest.approx(np.linalg.det(c0), rel=1e-3)


def test_escape_is_detected(natural: ModelParams) -> None:
    g = _grid(natural)
    with pytest.raises(SupportEscapedGrid):
        detqm_evolve(g, 0.0, 50.0, HamiltonianSpec.free(1.0))


def test_residual_converges_at_second_order(natural: ModelParams) -> None:
    H = HamiltonianSpec.harmonic(1.0, 1.0)
    coarse = detqm_residual(_grid(natural, 32, 6.0), H)
    fine = detqm_residual(_grid(natural, 64, 6.0), H)
    assert 3.2 < coarse / fine < 4.8


def test_hard_slit(natural: ModelParams) -> None:
    g = _grid(natural, 32)
    cut = apply_hard_slit(g, -0.5, 0.5)
    outside = (g.x < -0.5) | (g.x > 0.5)
    assert np.all(cut.values[outside] == 0.0)
    assert np.array_equal(cut.values[~outside], g.values[~outside])
    assert cut.norm() < g.norm()


def test_grid_checks() -> None:
    x = np.linspace(-1.0, 1.0, 8)
    with pytest.raises(InvariantViolation, match="GRD-003"):
        GridState(x, x, np.zeros((8, 7)))
    with pytest.raises(InvariantViolation, match="GRD-004"):
        GridState.from_gaussian(GaussianState.product(ModelParams.natural(2), dx=1.0, dp=1.0))
