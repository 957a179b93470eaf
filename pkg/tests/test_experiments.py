from __future__ import annotations

import math
import pathlib
from typing import Any

import numpy as np
import pytest
from pydantic import ValidationError

from subquantum_sim import experiments
from subquantum_sim.config import load_run_config
from subquantum_sim.contracts import InvariantViolation, TooFewPulses
from subquantum_sim.experiments import (
    BeamConfig,
    BeamUnits,
    DetectorSpec,
    decompose_density,
    default_detectors,
    exp1_concentration,
    exp2_side_suppression,
    exp3_rate_jitter,
    exp4_pulse_centres,
    exp5_pair_correlation,
    exp6_half_planes,
    regime_ledger,
    run_beam,
    sample_density,
    screen_density,
)
from subquantum_sim.utils import THREADS_ENV

DATA = pathlib.Path(__file__).resolve().parents[1] / "data"


def _beam(name: str) -> BeamConfig:
    section = load_run_config(DATA / name).experiment
    assert section is not None
    return section.beam


def _natural(**overrides: object) -> BeamConfig:
    return _beam("natural_demo.yaml").model_copy(update=overrides)


@pytest.mark.parametrize(
    "preset", ["c1_electron_tau1e-9.yaml", "c1_electron_tau1e-11.yaml", "c2_photon.yaml"]
)
def test_presets_satisfy_regime(preset: str) -> None:
    ledger = regime_ledger(_beam(preset))
    applicable = [c for c in ledger if c.applicable]
    assert applicable
    assert all(c.passed for c in applicable), [c for c in applicable if not c.passed]


def test_ledger_flags_wide_aperture() -> None:
    cfg = _beam("c1_electron_tau1e-9.yaml").model_copy(update={"delta": 1e-7})
    by = {c.name: c for c in regime_ledger(cfg)}
    assert not by["aperture_narrow"].passed
    assert by["aperture_narrow"].ratio == pytest.approx(3.0, rel=1e-3)
    assert by["transit_short"].passed


def test_ledger_rows() -> None:
    cfg = _beam("c1_electron_tau1e-9.yaml")
    by = {c.name: c for c in regime_ledger(cfg)}
    assert by["transit_short"].ratio == pytest.approx(0.09996, rel=1e-3)
    assert by["prepared_concentrated"].ratio == pytest.approx(9.7e-3, rel=0.02)
    assert not by["detector_wide"].applicable
    assert not by["mean_relaxes"].applicable
    dets = [DetectorSpec(name="d", kind="hole", r=1e-6)]
    wide = {c.name: c for c in regime_ledger(cfg, dets)}["detector_wide"]
    assert wide.applicable and wide.passed
    photon = {c.name for c in regime_ledger(_beam("c2_photon.yaml"))}
    assert {"photon_path_short", "photon_pulse_short"} <= photon


def test_beam_validation() -> None:
    base = dict(tau0=1.0, L=1.0, L_sc=1.0, delta=0.1)
    with pytest.raises(ValidationError):
        BeamConfig(m=1.0, V=4e8, **base)
    with pytest.raises(ValidationError):
        BeamConfig(**base)
    with pytest.raises(ValidationError):
        BeamConfig(photon=True, **base)
    with pytest.raises(ValidationError):
        BeamConfig(model="subqm_crf", m=1.0, V=1.0, tau1=0.5, **base)
    with pytest.raises(ValidationError):
        DetectorSpec(name="x", kind="hole")
    cfg = BeamConfig(photon=True, frequency=5e14, **base)
    assert cfg.speed == pytest.approx(299_792_458.0)
    assert cfg.wavelength == pytest.approx(299_792_458.0 / 5e14, rel=1e-12)


def test_units() -> None:
    u = BeamUnits.for_config(_beam("c1_electron_tau1e-9.yaml"))
    assert u.time == pytest.approx(8.99e-3 / 89937737.4)
    assert u.length == pytest.approx(math.sqrt(1e-34 * u.time / 1e-30))
    assert u.momentum * u.length == pytest.approx(1e-34)


def test_screen_densities_are_normalized() -> None:
    cfg = _natural()
    units = BeamUnits.for_config(cfg)
    for model in ("qm", "detqm", "subqm_rf"):
        d = screen_density(cfg, model, units)  # type: ignore[arg-type]
        xs = np.linspace(d.center - 12 * d.sigma, d.center + 12 * d.sigma, 4001)
        total = float(np.sum(d(xs)) * (xs[1] - xs[0]))
        assert total == pytest.approx(1.0, rel=1e-6)
    sub = screen_density(cfg, "subqm_rf", units)
    qm = screen_density(cfg, "qm", units)
    assert sub.sigma < 0.1 * qm.sigma


def test_sampling_follows_density() -> None:
    cfg = _natural()
    d = screen_density(cfg, "subqm_rf", BeamUnits.for_config(cfg))
    x = sample_density(d, 40_000, np.random.default_rng(0))
    assert float(np.mean(x)) == pytest.approx(d.center, abs=0.05 * d.sigma)
    assert float(np.std(x)) == pytest.approx(d.sigma, rel=0.03)


def test_run_is_deterministic(monkeypatch: pytest.MonkeyPatch) -> None:
    cfg = _natural(n_pulses=4, n_per_pulse=500)
    dets = default_detectors(cfg, "triple")
    monkeypatch.setenv(THREADS_ENV, "1")
    a = run_beam(cfg, dets)
    monkeypatch.setenv(THREADS_ENV, "3")
    b = run_beam(cfg, dets)
    assert [r.model_dump() for r in a.records] == [r.model_dump() for r in b.records]
    assert np.array_equal(a.hist_counts, b.hist_counts)
    assert a.n_sent == 2000
    c = run_beam(cfg.model_copy(update={"seed": 1}), dets)
    assert not np.array_equal(a.hist_counts, c.hist_counts)


def test_half_planes_conserve_particles() -> None:
    cfg = _natural(n_pulses=5, n_per_pulse=800)
    run = run_beam(cfg, default_detectors(cfg, "half_plane"))
    assert np.all(run.counts("plus") + run.counts("minus") == 800)


def test_concentration_experiment() -> None:
    report = exp1_concentration(_natural())
    (ind,) = report.indicators
    assert ind.passed
    assert ind.value == pytest.approx(ind.inputs["exact_ratio"], rel=0.1)
    assert set(report.pulses) == {"subqm_rf", "qm"}
    assert "subqm_rf" in report.densities


def test_side_suppression_experiment() -> None:
    report = exp2_side_suppression(_natural())
    assert [i.name for i in report.indicators] == ["side_fraction", "central_fraction"]
    assert all(i.passed for i in report.indicators)


def test_rate_jitter_experiment() -> None:
    cfg = _natural(delta=0.025, beta_jitter=3.0, n_pulses=30, n_per_pulse=2000)
    report = exp3_rate_jitter(cfg)
    own = [i for i in report.indicators if i.model == "subqm_rf"]
    assert own and own[0].passed
    with pytest.raises(TooFewPulses):
        exp3_rate_jitter(cfg.model_copy(update={"n_pulses": 5}))


def test_correlated_pulse_centres() -> None:
    cfg = _beam("crf_pulses.yaml")
    report = exp4_pulse_centres(cfg)
    by = {i.model: i for i in report.indicators}
    assert by["subqm_crf"].passed
    assert not by["qm"].passed
    assert by["qm"].value < 0.1
    with pytest.raises(InvariantViolation, match="BEAM-002"):
        exp4_pulse_centres(cfg.model_copy(update={"n_pulses": 9}))


def test_standard_qm_shows_no_signal() -> None:
    cfg = _natural(model="qm", n_pulses=20, n_per_pulse=2000)
    assert not any(i.passed for i in exp1_concentration(cfg).indicators)
    assert not any(i.passed for i in exp2_side_suppression(cfg).indicators)
    few = cfg.model_copy(update={"n_pulses": 6})
    assert not any(i.passed for i in exp4_pulse_centres(few).indicators)
    assert not any(i.passed for i in exp6_half_planes(cfg).indicators)


def test_pair_experiment_reports_both_indicators() -> None:
    report = exp5_pair_correlation(_natural(n_pulses=10, n_per_pulse=2000))
    names = {i.name for i in report.indicators if i.model == "subqm_rf"}
    assert names == {"pair_count_dispersion", "pair_imbalance"}


def test_side_suppression_needs_named_detectors() -> None:
    dets = [DetectorSpec(name="a", kind="hole", r=1.0)]
    with pytest.raises(InvariantViolation, match="BEAM-001"):
        exp2_side_suppression(_natural(n_pulses=2), dets)


def test_decompose_density() -> None:
    lam = 0.1
    x = np.linspace(-5.0, 5.0, 5001)
    rho = (1.0 + np.cos(2.0 * np.pi * x / lam)) * np.exp(-(x**2) / 2.0)
    envelope, phase = decompose_density(x, rho, lam)
    assert np.all(envelope >= rho)
    assert np.all((phase >= 0.0) & (phase <= 1.0))
    assert np.allclose(envelope * phase, rho)
    assert float(np.max(phase)) == pytest.approx(1.0)
    with pytest.raises(InvariantViolation, match="BEAM-003"):
        decompose_density([0.0, 1.0], [1.0, 1.0], 1.0)


def _crf_electron(**overrides: object) -> BeamConfig:
    """Electron beam with a common force relaxing within 0.01 transit times."""
    data = _beam("c1_electron_tau1e-9.yaml").model_dump()
    data.update(
        model="subqm_crf",
        tau0=1e-12,
        tau1=2e-9,
        T0=1e-14,
        n_pulses=60,
        n_per_pulse=2000,
    )
    data.update(overrides)
    return BeamConfig.model_validate(data)


def _side_holes() -> list[DetectorSpec]:
    return [
        DetectorSpec(name="plus", kind="hole", x1=5e-8, r=4e-8),
        DetectorSpec(name="minus", kind="hole", x1=-5e-8, r=4e-8),
    ]


def test_crf_ledger_uses_common_force_time() -> None:
    by = {c.name: c for c in regime_ledger(_crf_electron(), _side_holes())}
    assert all(c.passed for c in by.values() if c.applicable)
    assert by["pulse_short"].applicable
    assert by["pulse_short"].ratio == pytest.approx(0.01)
    assert by["mean_relaxes"].ratio == pytest.approx(0.01, rel=1e-3)
    # pulse five common-force times long, still far below tau1
    long_pulse = {c.name: c for c in regime_ledger(_crf_electron(T0=5e-12))}
    assert long_pulse["pulse_short"].ratio == pytest.approx(5.0)
    assert not long_pulse["pulse_short"].passed
    assert long_pulse["transit_short"].passed


def test_correlated_pulses_pass_pair_experiments() -> None:
    cfg = _crf_electron()
    pair = exp5_pair_correlation(cfg, _side_holes())
    assert all(c.passed for c in pair.ledger if c.applicable)
    own = [i for i in pair.indicators if i.model == "subqm_crf"]
    assert {i.name for i in own} == {"pair_count_dispersion", "pair_imbalance"}
    assert all(i.passed for i in own), own
    halves = exp6_half_planes(cfg)
    own = [i for i in halves.indicators if i.model == "subqm_crf"]
    assert own and all(i.passed for i in own), own


def test_standard_qm_null_over_seeds() -> None:
    base = _natural(model="qm", n_pulses=30, n_per_pulse=1000)
    passes: dict[str, int] = {}
    for seed in range(20):
        cfg = base.model_copy(update={"seed": seed})
        reports = [exp3_rate_jitter(cfg), exp5_pair_correlation(cfg), exp6_half_planes(cfg)]
        if seed < 3:
            reports.append(exp2_side_suppression(cfg))
            reports.append(exp4_pulse_centres(cfg.model_copy(update={"n_pulses": 6})))
        for report in reports:
            for ind in report.indicators:
                key = f"{report.experiment}:{ind.name}"
                passes[key] = passes.get(key, 0) + int(ind.passed)
    assert len(passes) == 8
    # at most the false-positive share of a 95% test
    assert all(n <= 1 for n in passes.values()), passes


def test_side_suppression_intervals_match_verdict() -> None:
    report = exp2_side_suppression(_natural())
    side, central = report.indicators
    assert side.threshold == pytest.approx(0.1)
    assert side.inputs["ratio_lo"] <= side.value <= side.inputs["ratio_hi"]
    assert side.passed == (side.inputs["ratio_hi"] <= side.threshold)
    assert central.inputs["ratio_lo"] <= central.value <= central.inputs["ratio_hi"]
    assert central.passed == (central.inputs["ratio_lo"] > central.threshold)
    for model in ("subqm_rf", "qm"):
        lo, hi = side.inputs[f"side_lo_{model}"], side.inputs[f"side_hi_{model}"]
        assert lo <= side.inputs[f"side_{model}"] <= hi
    assert side.confidence == pytest.approx(0.997)
    assert central.passed


def test_pulse_workers_share_screen_densities(monkeypatch: pytest.MonkeyPatch) -> None:
    calls: list[float] = []
    real = experiments.screen_density

    def counting(*args: Any, **kwargs: Any) -> Any:
        calls.append(kwargs.get("tau", 0.0))
        return real(*args, **kwargs)

    monkeypatch.setattr(experiments, "screen_density", counting)
    monkeypatch.setenv(THREADS_ENV, "4")
    cfg = _natural(n_pulses=16, n_per_pulse=200)
    run = run_beam(cfg, default_detectors(cfg, "half_plane"))
    assert run.n_sent == 3200
    # one density per axis
    assert len(calls) == 2
