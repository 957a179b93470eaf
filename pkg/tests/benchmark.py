from __future__ import annotations

import numpy as np

from subquantum_sim.detqm import GridState, HamiltonianSpec, detqm_evolve
from subquantum_sim.evolution import GaussianState, propagate
from subquantum_sim.experiments import BeamConfig, default_detectors, run_beam
from subquantum_sim.kernels import ModelParams, build_kernel


def test_benchmark_kernel_assembly(benchmark):
    params = ModelParams.from_tau([1.0, 2.0, 3.0], 10.0)
    kern = benchmark(build_kernel, 2.0, params)
    assert kern.Qin.shape == (6, 6)


def test_benchmark_propagate(benchmark):
    params = ModelParams.from_tau([1.0, 2.0, 3.0], 10.0)
    state = GaussianState.product(params, dx=1.0, dp=1.0)
    out = benchmark(propagate, state, 2.0)
    assert out.n == 3


def test_benchmark_pulse(benchmark):
    cfg = BeamConfig(
        model="subqm_rf",
        m=1.0,
        hbar=1.0,
        tau0=20.0,
        V=1.0,
        L=1.0,
        L_sc=1.0,
        delta=0.1,
        n_pulses=1,
        n_per_pulse=5000,
    )
    run = benchmark(run_beam, cfg, default_detectors(cfg, "triple"))
    assert run.n_sent == 5000


def test_benchmark_detqm_step(benchmark):
    state = GaussianState.product(ModelParams.natural(), dx=1.0, dp=1.0)
    grid = GridState.from_gaussian(state, nx=128, n_p=128)
    H = HamiltonianSpec.harmonic(1.0, 1.0)
    out = benchmark(detqm_evolve, grid, 0.0, 0.5, H)
    assert np.isfinite(out.norm())
