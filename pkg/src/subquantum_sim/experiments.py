"""
Monte-Carlo harness for the beam experiments that separate the subquantum
models from standard quantum mechanics.

A beam passes ``n_holes`` aligned Gaussian holes a distance ``L`` apart and
reaches a screen a distance ``L_sc`` behind the last one. Transverse motion
is computed exactly in the Gaussian calculus, in units where the transit
time, the particle mass and hbar are 1, then arrival positions are drawn
per pulse by inverse-CDF sampling and tallied by detectors.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, interpolate, optimize, stats

from .contracts import (
    FitFailed,
    InvariantViolation,
    SamplingDegenerate,
    TooFewPulses,
    ZeroCounts,
    validate_counts,
)
from .crf import CrfParams
from .detqm import detqm_transport
from .evolution import (
    GaussianState,
    SlitSpec,
    apply_slit,
    dispersion_qm,
    dispersion_subqm,
    pipeline_kappa,
    position_amplitude,
    propagate,
    qm_apply_slit,
    qm_propagate,
)
from .kernels import ModelParams, Regime
from .quadratics import FArray, QuadForm, log_squared_norm, moments
from .utils import derive_rng, worker_count

logger = logging.getLogger(__name__)

C_LIGHT = 299_792_458.0
MUCH_LESS = 0.1
CONFIDENCE = 0.95
# Two-sided level of the side-suppression bootstrap intervals.
SIDE_CONFIDENCE = 0.997

ModelName = Literal["qm", "detqm", "subqm_rf", "subqm_crf"]
SUBQUANTUM_MODELS = ("subqm_rf", "subqm_crf")


class DetectorSpec(BaseModel):
    """Counting region on the screen; coordinates in metres."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    kind: Literal["hole", "slit", "half_plane"]
    x1: float = 0.0
    x2: float = 0.0
    r: float = Field(default=0.0, ge=0.0)
    sign: Literal[1, -1] = 1

    @model_validator(mode="after")
    def _radius_needed(self) -> DetectorSpec:
        if self.kind in ("hole", "slit") and self.r <= 0.0:
            raise ValueError(f"detector {self.name}: {self.kind} needs r > 0")
        return self

    def contains(self, x1: FArray, x2: FArray) -> npt.NDArray[np.bool_]:
        if self.kind == "hole":
            return (x1 - self.x1) ** 2 + (x2 - self.x2) ** 2 < self.r**2
        if self.kind == "slit":
            return np.abs(x1 - self.x1) < self.r
        return self.sign * (x1 - self.x1) > 0.0


class BeamConfig(BaseModel):
    """Beam, geometry and model parameters in SI units."""

    model_config = ConfigDict(extra="forbid")

    model: ModelName = "subqm_rf"
    m: float | None = Field(default=None, gt=0.0)
    hbar: float = Field(default=1.054571817e-34, gt=0.0)
    tau0: float = Field(gt=0.0)
    tau1: float | None = Field(default=None, gt=0.0)
    V: float | None = Field(default=None, gt=0.0)
    L: float = Field(gt=0.0)
    L_sc: float = Field(gt=0.0)
    delta: float = Field(gt=0.0)
    n_holes: int = Field(default=2, ge=2, le=3)
    geometry: Literal["hole", "slit"] = "hole"
    T0: float = Field(default=0.0, ge=0.0)
    n_pulses: int = Field(default=100, ge=1)
    n_per_pulse: int = Field(default=1000, ge=1)
    beta_jitter: float = Field(default=1.0, ge=1.0)
    photon: bool = False
    frequency: float | None = Field(default=None, gt=0.0)
    regime: Regime = "exact"
    seed: int = Field(default=0, ge=0)
    grid_points: int = Field(default=4096, ge=64)
    window_sigmas: float = Field(default=10.0, gt=0.0)

    @field_validator("V")
    @classmethod
    def _subluminal(cls, v: float | None) -> float | None:
        if v is not None and v > C_LIGHT:
            raise ValueError("V exceeds the speed of light")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> BeamConfig:
        if self.photon:
            if self.frequency is None:
                raise ValueError("photon mode needs frequency")
        else:
            if self.m is None or self.V is None:
                raise ValueError("massive beams need m and V")
        if self.model == "subqm_crf":
            if self.tau1 is None:
                raise ValueError("subqm_crf needs tau1")
            if self.tau1 <= self.tau0:
                raise ValueError("subqm_crf needs tau1 > tau0")
        return self

    @property
    def mass(self) -> float:
        if self.photon:
            assert self.frequency is not None
            return self.hbar * 2.0 * math.pi * self.frequency / C_LIGHT**2
        assert self.m is not None
        return self.m

    @property
    def speed(self) -> float:
        if self.photon:
            return C_LIGHT
        assert self.V is not None
        return self.V

    @property
    def transit_time(self) -> float:
        return self.L / self.speed

    @property
    def screen_time(self) -> float:
        return self.L_sc / self.speed

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi * self.hbar / (self.mass * self.speed)

    @property
    def relaxation_time(self) -> float:
        """Relaxation time of single-particle motion (the relative sector for correlated beams)."""
        if self.model == "subqm_crf":
            assert self.tau1 is not None
            return self.tau1
        return self.tau0


class RegimeCheck(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    ratio: float
    threshold: float
    passed: bool
    applicable: bool = True
    description: str = ""


class Indicator(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    model: str
    value: float
    threshold: float
    passed: bool
    confidence: float | None = None
    inputs: dict[str, float] = Field(default_factory=dict)


class PulseRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int
    n_sent: int
    counts: dict[str, int]
    mean: list[float]
    var: list[float]
    beta_scale: float = 1.0


class DensityTrace(BaseModel):
    """Screen density with its envelope and oscillating factor, ``rho = envelope * phase``."""

    model_config = ConfigDict(extra="forbid")

    x: list[float]
    rho: list[float]
    envelope: list[float]
    phase: list[float]


class ExperimentReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: str
    model: str
    reference_model: str = "qm"
    config: BeamConfig
    detectors: list[DetectorSpec]
    indicators: list[Indicator]
    ledger: list[RegimeCheck]
    pulses: dict[str, list[PulseRecord]]
    densities: dict[str, DensityTrace]
    warnings: list[str] = Field(default_factory=list)


def _check(name: str, ratio: float, description: str, applicable: bool = True) -> RegimeCheck:
    return RegimeCheck(
        name=name,
        ratio=float(ratio),
        threshold=MUCH_LESS,
        passed=bool(ratio <= MUCH_LESS),
        applicable=applicable,
        description=description,
    )


def prepared_kappa(config: BeamConfig) -> float:
    """Concentration of the beam behind the last hole (short-time estimate)."""
    params = ModelParams.from_tau(config.mass, config.relaxation_time, config.hbar)
    return pipeline_kappa(config.delta, config.delta, config.transit_time, params)


def regime_ledger(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> list[RegimeCheck]:
    """Each condition the subquantum prediction relies on, as a ratio that must be small."""
    T, T_sc = config.transit_time, config.screen_time
    tau = config.relaxation_time
    m, hbar = config.mass, config.hbar
    radii = [d.r for d in detectors or () if d.kind in ("hole", "slit")]
    crf = config.model == "subqm_crf"
    rows: list[tuple[str, float, str, bool]] = [
        ("transit_short", T / tau, "hole-to-hole transit << relaxation time", True),
        ("aperture_narrow", config.delta**2 * 3.0 * m / (T * hbar), "delta^2 << T hbar / 3m", True),
        ("screen_transit_short", T_sc / tau, "hole-to-screen transit << relaxation time", True),
        ("prepared_concentrated", prepared_kappa(config), "prepared beam concentrated", True),
        (
            "detector_wide",
            config.wavelength / min(radii) if radii else 0.0,
            "de Broglie wavelength << detector radii",
            bool(radii),
        ),
        ("pulse_short", config.T0 / config.tau0, "pulse duration << tau0", config.T0 > 0.0),
        ("mean_relaxes", config.tau0 / T, "common-force relaxation << transit", crf),
        ("screen_mean_relaxes", config.tau0 / T_sc, "common force << screen transit", crf),
    ]
    if config.photon:
        rows.append(
            (
                "photon_path_short",
                max(config.L, config.L_sc) / (config.tau0 * C_LIGHT),
                "optical paths << c tau0",
                True,
            )
        )
        rows.append(
            (
                "photon_pulse_short",
                C_LIGHT * config.T0 / min(config.L, config.L_sc),
                "pulse length << optical paths",
                config.T0 > 0.0,
            )
        )
    return [_check(name, ratio, text, ok) for name, ratio, text, ok in rows]


@dataclass(frozen=True)
class BeamUnits:
    """Scales turning SI quantities into units with transit time, mass and hbar equal to 1."""

    time: float
    length: float
    momentum: float

    @classmethod
    def for_config(cls, config: BeamConfig) -> BeamUnits:
        T = config.transit_time
        length = math.sqrt(config.hbar * T / config.mass)
        return cls(time=T, length=length, momentum=config.hbar / length)


@dataclass(frozen=True)
class ScreenDensity:
    """Unit-mass screen density in scaled units, with the mean and standard deviation."""

    amplitude: QuadForm
    center: float
    sigma: float

    def __call__(self, x: FArray) -> FArray:
        return np.abs(self.amplitude.evaluate(np.asarray(x, dtype=np.float64)[..., None])) ** 2


def _natural_params(tau: float, units: BeamUnits) -> ModelParams:
    return ModelParams.from_tau(1.0, tau / units.time)


def _screen(amplitude: QuadForm) -> ScreenDensity:
    mu, cov = moments(amplitude)
    # Rescale to unit integral; the raw modulus can underflow when beta*T is large.
    shape = amplitude.with_log_scale(0j)
    unit = shape.with_log_scale(-0.5 * log_squared_norm(shape))
    return ScreenDensity(unit, float(mu[0]), math.sqrt(float(cov[0, 0])))


def _advance(state: GaussianState, T: float, model: ModelName, regime: Regime) -> GaussianState:
    if model == "detqm":
        return detqm_transport(state, T)
    out = propagate(state, T, regime)
    assert isinstance(out, GaussianState)
    return out


def _through_slit(state: GaussianState, slit: SlitSpec) -> GaussianState:
    out = apply_slit(state, slit)
    assert isinstance(out, GaussianState)
    return out


def beam_slits(config: BeamConfig) -> list[SlitSpec]:
    """``n_holes`` aligned holes of half-width ``delta``, in metres."""
    return [SlitSpec(0.0, config.delta)] * config.n_holes


def screen_density(
    config: BeamConfig,
    model: ModelName,
    units: BeamUnits,
    *,
    tau: float | None = None,
    slits: Sequence[SlitSpec] | None = None,
    centre_scale: float = 1.0,
) -> ScreenDensity:
    """
    Exact screen density of one transverse coordinate for ``model``.

    ``slits`` are in metres, one transit time apart. ``tau`` overrides the
    relaxation time and ``centre_scale`` multiplies the slit centres, which is
    how the correlated model evaluates its relative sector (scale 0) and its
    mean sector (scale ``sqrt(n)``).
    """
    scaled = [
        SlitSpec(centre_scale * s.center / units.length, s.half_width / units.length)
        for s in (slits if slits is not None else beam_slits(config))
    ]
    if not scaled:
        raise InvariantViolation("SLT-002 need at least one slit")
    T_sc = config.screen_time / units.time
    if model == "qm":
        psi = qm_apply_slit(QuadForm.unit(1), scaled[0])
        for slit in scaled[1:]:
            psi = qm_apply_slit(qm_propagate(psi, 1.0, 1.0), slit)
        return _screen(qm_propagate(psi, T_sc, 1.0))
    params = _natural_params(config.relaxation_time if tau is None else tau, units)
    state = _through_slit(GaussianState.product(params), scaled[0])
    for slit in scaled[1:]:
        state = _through_slit(_advance(state, 1.0, model, config.regime), slit)
    return _screen(position_amplitude(_advance(state, T_sc, model, config.regime)))


def sample_density(
    density: ScreenDensity,
    n: int,
    rng: np.random.Generator,
    grid_points: int = 4096,
    window_sigmas: float = 10.0,
) -> FArray:
    """Inverse-CDF sampling on a uniform grid of ``density.center +/- window_sigmas * sigma``."""
    half = window_sigmas * density.sigma
    xs = np.linspace(density.center - half, density.center + half, grid_points)
    rho = density(xs)
    if not np.all(np.isfinite(rho)) or float(np.max(rho)) <= 0.0:
        raise SamplingDegenerate("screen density vanishes on the sampling window")
    cdf = integrate.cumulative_trapezoid(rho, xs, initial=0.0)
    if cdf[-1] <= 0.0:
        raise SamplingDegenerate("screen density integrates to zero")
    cdf /= cdf[-1]
    inv_cdf = interpolate.interp1d(cdf, xs, bounds_error=False, fill_value=(xs[0], xs[-1]))
    return np.asarray(inv_cdf(rng.random(n)), dtype=np.float64)


@dataclass
class BeamRun:
    model: str
    records: list[PulseRecord]
    hist_edges: FArray
    hist_counts: npt.NDArray[np.int64]
    density: DensityTrace
    dims: int = 2
    warnings: list[str] = field(default_factory=list)

    def counts(self, name: str) -> npt.NDArray[np.int64]:
        return np.array([r.counts[name] for r in self.records], dtype=np.int64)

    @property
    def n_sent(self) -> int:
        return sum(r.n_sent for r in self.records)


def _jitter(config: BeamConfig, index: int) -> float:
    if config.beta_jitter <= 1.0:
        return 1.0
    span = math.log(config.beta_jitter)
    return float(math.exp(derive_rng(config.seed, "jitter", index).uniform(-span, span)))


def _groups(config: BeamConfig) -> list[int]:
    # Particles within one common-force relaxation time share a group centre.
    g = 1 if config.T0 <= 0.0 else max(1, math.ceil(config.T0 / config.tau0))
    g = min(g, config.n_per_pulse)
    return [len(a) for a in np.array_split(np.arange(config.n_per_pulse), g)]


class _PulseSampler:
    def __init__(
        self,
        config: BeamConfig,
        model: ModelName,
        units: BeamUnits,
        slits: Sequence[SlitSpec],
    ) -> None:
        self.config = config
        self.model = model
        self.units = units
        # Slit centres offset x1 only; x2 sees the same apertures centred at 0.
        self.slits = (list(slits), [SlitSpec(0.0, s.half_width) for s in slits])
        self._cache: dict[tuple[str, float, int, int], ScreenDensity] = {}
        self._lock = threading.Lock()

    def density(self, kind: str, scale: float, n_group: int = 1, axis: int = 0) -> ScreenDensity:
        key = (kind, scale, n_group, axis)
        with self._lock:
            if key not in self._cache:
                cfg = self.config
                slits = self.slits[axis]
                if kind == "single":
                    tau = cfg.relaxation_time / scale
                    self._cache[key] = screen_density(
                        cfg, self.model, self.units, tau=tau, slits=slits
                    )
                else:
                    assert cfg.tau1 is not None
                    crf = CrfParams(n=n_group, m=1.0, a0=cfg.tau0**2, a1=cfg.tau1**2)
                    relative = kind == "relative"
                    self._cache[key] = screen_density(
                        cfg,
                        "subqm_rf",
                        self.units,
                        tau=(cfg.tau1 if relative else crf.tau3) / scale,
                        slits=slits,
                        centre_scale=0.0 if relative else math.sqrt(n_group),
                    )
            return self._cache[key]

    def _coordinate(self, rng: np.random.Generator, scale: float, axis: int) -> FArray:
        cfg = self.config
        if self.model != "subqm_crf":
            return sample_density(
                self.density("single", scale, axis=axis),
                cfg.n_per_pulse,
                rng,
                cfg.grid_points,
                cfg.window_sigmas,
            )
        parts = []
        rel = self.density("relative", scale, axis=axis)
        for size in _groups(cfg):
            mean = self.density("mean", scale, size, axis)
            y_mean = sample_density(mean, 1, rng, cfg.grid_points, cfg.window_sigmas)[0]
            centre = y_mean / math.sqrt(size)
            if size == 1:
                parts.append(np.array([centre]))
                continue
            u = sample_density(rel, size, rng, cfg.grid_points, cfg.window_sigmas)
            parts.append(centre + (u - u.mean()))
        return np.concatenate(parts)

    def pulse(self, index: int, detectors: Sequence[DetectorSpec]) -> tuple[PulseRecord, FArray]:
        cfg = self.config
        scale = _jitter(cfg, index) if self.model in SUBQUANTUM_MODELS else 1.0
        rng = derive_rng(cfg.seed, f"{self.model}:pulse", index)
        x1 = self._coordinate(rng, scale, 0) * self.units.length
        if cfg.geometry == "hole":
            x2 = self._coordinate(rng, scale, 1) * self.units.length
        else:
            x2 = np.zeros_like(x1)
        counts = {d.name: int(np.count_nonzero(d.contains(x1, x2))) for d in detectors}
        if _disjoint(detectors):
            validate_counts(list(counts.values()), cfg.n_per_pulse)
        record = PulseRecord(
            index=index,
            n_sent=cfg.n_per_pulse,
            counts=counts,
            mean=[float(x1.mean()), float(x2.mean())],
            var=[float(x1.var()), float(x2.var())],
            beta_scale=scale,
        )
        return record, x1


def _disjoint(detectors: Sequence[DetectorSpec]) -> bool:
    holes = [d for d in detectors if d.kind == "hole"]
    if len(holes) != len(detectors):
        return False
    for i, a in enumerate(holes):
        for b in holes[i + 1 :]:
            if math.hypot(a.x1 - b.x1, a.x2 - b.x2) < a.r + b.r:
                return False
    return True


def run_beam(
    config: BeamConfig,
    detectors: Sequence[DetectorSpec],
    model: ModelName | None = None,
    *,
    slits: Sequence[SlitSpec] | None = None,
    hist_bins: int = 400,
) -> BeamRun:
    """
    Simulate ``n_pulses`` pulses of ``n_per_pulse`` particles and tally every detector.

    ``slits`` (metres) default to :func:`beam_slits`; ``model`` defaults to ``config.model``.
    """
    name: ModelName = model or config.model
    units = BeamUnits.for_config(config)
    sampler = _PulseSampler(config, name, units, beam_slits(config) if slits is None else slits)
    base = (
        sampler.density("single", 1.0)
        if name != "subqm_crf"
        else sampler.density("relative", 1.0)
    )
    centre, half = base.center, config.window_sigmas * base.sigma
    if name == "subqm_crf":
        size = _groups(config)[0]
        mean = sampler.density("mean", 1.0, size)
        centre = mean.center / math.sqrt(size)
        half += config.window_sigmas * mean.sigma / math.sqrt(size)
    edges = np.linspace(centre - half, centre + half, hist_bins + 1) * units.length
    xs = np.linspace(centre - half, centre + half, 512)
    rho = base(xs)
    envelope, phase = decompose_density(xs * units.length, rho, config.wavelength)
    trace = DensityTrace(
        x=(xs * units.length).tolist(),
        rho=rho.tolist(),
        envelope=envelope.tolist(),
        phase=phase.tolist(),
    )

    workers = worker_count()
    logger.info(
        "beam model=%s pulses=%d per_pulse=%d workers=%d",
        name,
        config.n_pulses,
        config.n_per_pulse,
        workers,
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda i: sampler.pulse(i, detectors), range(config.n_pulses)))
    hist = np.zeros(hist_bins, dtype=np.int64)
    for _, x1 in results:
        hist += np.histogram(x1, bins=edges)[0]
    warnings = []
    if config.photon:
        warnings.append("photon beam uses an effective non-relativistic mass; illustrative only")
        logger.warning("%s", warnings[-1])
    return BeamRun(
        model=name,
        records=[r for r, _ in results],
        hist_edges=edges,
        hist_counts=hist,
        density=trace,
        dims=2 if config.geometry == "hole" else 1,
        warnings=warnings,
    )


def default_detectors(
    config: BeamConfig, layout: Literal["triple", "pair", "half_plane"]
) -> list[DetectorSpec]:
    """
    Standard detector layouts on the screen.

    ``triple`` is a central region with two side regions sized by the QM
    screen width, so QM spreads over the sides while a concentrated beam does
    not. ``pair`` puts two side regions at the edge of the model's own beam,
    where its counts are most sensitive to pulse-to-pulse changes.
    """
    if layout == "half_plane":
        return [
            DetectorSpec(name="plus", kind="half_plane", sign=1),
            DetectorSpec(name="minus", kind="half_plane", sign=-1),
        ]
    units = BeamUnits.for_config(config)
    kind: Literal["hole", "slit"] = "hole" if config.geometry == "hole" else "slit"
    if layout == "triple":
        w = screen_density(config, "qm", units).sigma * units.length
        return [
            DetectorSpec(name="center", kind=kind, x1=0.0, r=0.5 * w),
            DetectorSpec(name="plus", kind=kind, x1=2.0 * w, r=w),
            DetectorSpec(name="minus", kind=kind, x1=-2.0 * w, r=w),
        ]
    single: ModelName = "subqm_rf" if config.model == "subqm_crf" else config.model
    w = screen_density(config, single, units).sigma * units.length
    return [
        DetectorSpec(name="plus", kind=kind, x1=1.5 * w, r=w),
        DetectorSpec(name="minus", kind=kind, x1=-1.5 * w, r=w),
    ]


def _fit_width_sq(run: BeamRun) -> float:
    centers = 0.5 * (run.hist_edges[1:] + run.hist_edges[:-1])
    y = run.hist_counts.astype(np.float64)
    total = float(np.sum(y))
    if total <= 0.0:
        raise ZeroCounts(f"no arrivals recorded for {run.model}")
    mu0 = float(np.sum(y * centers)) / total
    sd0 = math.sqrt(max(float(np.sum(y * (centers - mu0) ** 2)) / total, 1e-300))

    def gauss(x: FArray, amp: float, mu: float, sd: float) -> FArray:
        return amp * np.exp(-0.5 * ((x - mu) / sd) ** 2)

    try:
        popt, _ = optimize.curve_fit(gauss, centers / sd0, y, p0=[float(np.max(y)), mu0 / sd0, 1.0])
    except (RuntimeError, ValueError) as exc:
        raise FitFailed(f"Gaussian fit failed for {run.model}: {exc}") from exc
    sd = abs(float(popt[2])) * sd0
    if not math.isfinite(sd) or sd <= 0.0:
        raise FitFailed(f"Gaussian fit for {run.model} returned width {sd}")
    return 2.0 * sd**2


def _report(
    name: str,
    config: BeamConfig,
    detectors: Sequence[DetectorSpec],
    runs: Sequence[BeamRun],
    indicators: list[Indicator],
    notes: Sequence[str] = (),
) -> ExperimentReport:
    warnings: list[str] = list(notes)
    for r in runs:
        warnings.extend(w for w in r.warnings if w not in warnings)
    ledger = regime_ledger(config, detectors)
    for chk in ledger:
        if chk.applicable and not chk.passed:
            logger.warning("regime check %s fails: ratio %.3g", chk.name, chk.ratio)
    return ExperimentReport(
        experiment=name,
        model=config.model,
        config=config,
        detectors=list(detectors),
        indicators=indicators,
        ledger=ledger,
        pulses={r.model: r.records for r in runs},
        densities={r.model: r.density for r in runs},
        warnings=warnings,
    )


def _paired(config: BeamConfig, detectors: Sequence[DetectorSpec]) -> list[BeamRun]:
    model_run = run_beam(config, detectors)
    if config.model == "qm":
        return [model_run]
    return [model_run, run_beam(config, detectors, "qm")]


def _by_model(runs: Sequence[BeamRun]) -> dict[str, BeamRun]:
    return {r.model: r for r in runs}


def exp1_concentration(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """Screen width of the model relative to standard QM; the subquantum beam stays narrow."""
    dets = list(detectors or [])
    runs = _paired(config, dets)
    by = _by_model(runs)
    w_model = _fit_width_sq(by[config.model])
    w_qm = _fit_width_sq(by["qm"])
    units = BeamUnits.for_config(config)
    single: ModelName = "subqm_rf" if config.model == "subqm_crf" else config.model
    exact_model = screen_density(config, single, units)
    exact_qm = screen_density(config, "qm", units)
    T_sc = config.screen_time
    m, hbar = config.mass, config.hbar
    tau = config.relaxation_time
    kappa = prepared_kappa(config)
    dp_sq = (kappa * hbar / (2.0 * config.delta)) ** 2
    params = ModelParams.from_tau(m, tau, hbar)
    formula_model = dispersion_subqm(config.delta**2, dp_sq, T_sc, params)
    formula_qm = dispersion_qm(config.delta**2, T_sc, m, hbar)
    ratio = w_model / w_qm
    ind = Indicator(
        name="screen_dispersion_ratio",
        model=config.model,
        value=ratio,
        threshold=MUCH_LESS,
        passed=bool(ratio <= MUCH_LESS),
        inputs={
            "width_sq_model": w_model,
            "width_sq_qm": w_qm,
            "exact_ratio": (exact_model.sigma / exact_qm.sigma) ** 2,
            "formula_ratio": formula_model / formula_qm,
            "prepared_kappa": kappa,
        },
    )
    return _report("concentration", config, dets, runs, [ind])


def _ratio_of_sums(num: FArray, den: FArray, axis: int = -1) -> FArray:
    d = np.sum(den, axis=axis)
    n = np.sum(num, axis=axis)
    return np.divide(n, d, out=np.zeros_like(n, dtype=np.float64), where=d > 0)


def _fraction_ci(
    num: npt.NDArray[np.int64],
    den: npt.NDArray[np.int64],
    rng: np.random.Generator,
    n_resamples: int = 2000,
) -> tuple[float, float, float]:
    """Pooled fraction ``sum(num) / sum(den)`` and its percentile bootstrap interval over pulses."""
    total = float(np.sum(den))
    if total <= 0.0:
        raise ZeroCounts("no particles reached the detectors")
    f = float(np.sum(num)) / total
    if num.size < 2:
        return f, f, f
    res = stats.bootstrap(
        (num.astype(np.float64), den.astype(np.float64)),
        _ratio_of_sums,
        paired=True,
        vectorized=True,
        confidence_level=SIDE_CONFIDENCE,
        n_resamples=n_resamples,
        method="percentile",
        random_state=rng,
    )
    lo, hi = res.confidence_interval
    return f, float(lo), float(hi)


def _ratio_interval(model: tuple[float, float], ref: tuple[float, float]) -> tuple[float, float]:
    lo = model[0] / ref[1] if ref[1] > 0.0 else 0.0
    hi = model[1] / ref[0] if ref[0] > 0.0 else math.inf
    return lo, hi


def exp2_side_suppression(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """
    Fraction of arrivals in side detectors (and, dually, in the central one) against QM.

    Side suppression passes when the upper bootstrap bound of the side-fraction
    ratio is at most ``MUCH_LESS``; central enhancement passes when the lower
    bound of the central-fraction ratio exceeds 1.
    """
    dets = list(detectors or default_detectors(config, "triple"))
    names = {d.name for d in dets}
    if not {"center", "plus", "minus"} <= names:
        raise InvariantViolation("BEAM-001 side suppression needs detectors center, plus, minus")
    runs = _paired(config, dets)
    by = _by_model(runs)
    rng = derive_rng(config.seed, "bootstrap")
    stats_: dict[str, dict[str, float]] = {}
    for model, run in by.items():
        c, p, m_ = run.counts("center"), run.counts("plus"), run.counts("minus")
        side, side_lo, side_hi = _fraction_ci(p + m_, c + p + m_, rng)
        central, central_lo, central_hi = _fraction_ci(
            c, np.full_like(c, config.n_per_pulse), rng
        )
        stats_[model] = {
            "side": side,
            "side_lo": side_lo,
            "side_hi": side_hi,
            "central": central,
            "central_lo": central_lo,
            "central_hi": central_hi,
        }
    s_m, s_q = stats_[config.model], stats_["qm"]
    if s_q["side"] <= 0.0 or s_q["central"] <= 0.0:
        raise ZeroCounts("QM reference left the side or central detectors empty")
    side_ci = _ratio_interval((s_m["side_lo"], s_m["side_hi"]), (s_q["side_lo"], s_q["side_hi"]))
    central_ci = _ratio_interval(
        (s_m["central_lo"], s_m["central_hi"]), (s_q["central_lo"], s_q["central_hi"])
    )
    inputs = {f"{k}_{model}": v for model, s in stats_.items() for k, v in s.items()}
    side_inputs = {**inputs, "ratio_lo": side_ci[0], "ratio_hi": side_ci[1]}
    central_inputs = {**inputs, "ratio_lo": central_ci[0], "ratio_hi": central_ci[1]}
    indicators = [
        Indicator(
            name="side_fraction",
            model=config.model,
            value=s_m["side"] / s_q["side"],
            threshold=MUCH_LESS,
            passed=bool(side_ci[1] <= MUCH_LESS),
            confidence=SIDE_CONFIDENCE,
            inputs=side_inputs,
        ),
        Indicator(
            name="central_fraction",
            model=config.model,
            value=s_m["central"] / s_q["central"],
            threshold=1.0,
            passed=bool(central_ci[0] > 1.0),
            confidence=SIDE_CONFIDENCE,
            inputs=central_inputs,
        ),
    ]
    return _report("side_suppression", config, dets, runs, indicators)


def _excess_variance(counts: npt.NDArray[np.int64]) -> tuple[float, float, float]:
    """``(s^2/mean, chi-square threshold on that ratio, mean)`` of per-pulse counts."""
    pulses = counts.size
    mean = float(np.mean(counts))
    if mean <= 0.0:
        raise ZeroCounts("mean count is zero")
    var = float(np.mean((counts - mean) ** 2))
    threshold = float(stats.chi2.ppf(CONFIDENCE, pulses - 1)) / pulses
    return var / mean, threshold, mean


def _per_run(
    config: BeamConfig,
    runs: Sequence[BeamRun],
    indicate: Callable[[BeamRun], list[Indicator]],
) -> tuple[list[Indicator], list[str]]:
    """Indicators for every run; empty counts in the QM reference become a warning."""
    indicators: list[Indicator] = []
    notes: list[str] = []
    for run in runs:
        try:
            indicators += indicate(run)
        except ZeroCounts as exc:
            if run.model == config.model:
                raise
            notes.append(f"{run.model} reference skipped: {exc}")
    return indicators, notes


def exp3_rate_jitter(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """Pulse-to-pulse variance of side counts when the relaxation rate fluctuates between pulses."""
    if config.n_pulses < 10:
        raise TooFewPulses(f"rate jitter statistics need at least 10 pulses, got {config.n_pulses}")
    dets = list(detectors or default_detectors(config, "pair"))
    runs = _paired(config, dets)

    def indicate(run: BeamRun) -> list[Indicator]:
        ratio, threshold, mean = _excess_variance(run.counts("plus") + run.counts("minus"))
        return [
            Indicator(
                name="pair_sum_excess_variance",
                model=run.model,
                value=ratio,
                threshold=threshold,
                passed=bool(ratio > threshold),
                confidence=CONFIDENCE,
                inputs={"mean": mean, "pulses": float(len(run.records))},
            )
        ]

    indicators, notes = _per_run(config, runs, indicate)
    return _report("rate_jitter", config, dets, runs, indicators, notes)


def exp4_pulse_centres(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """Dispersion of per-pulse centroids against the per-pulse radius."""
    if config.n_pulses < 2:
        raise TooFewPulses(f"pulse centres need at least 2 pulses, got {config.n_pulses}")
    if config.n_pulses > 8:
        raise InvariantViolation(
            f"BEAM-002 pulse-centre experiment uses 2 to 8 pulses, got {config.n_pulses}"
        )
    dets = list(detectors or [])
    runs = _paired(config, dets)
    indicators = []
    for run in runs:
        d = run.dims
        means = np.array([r.mean[:d] for r in run.records])
        var = np.array([r.var[:d] for r in run.records])
        n = np.array([r.n_sent for r in run.records], dtype=np.float64)
        r0_sq = float(np.mean(var))
        if r0_sq <= 0.0:
            raise FitFailed("per-pulse radius is zero")
        spread = float(np.mean(np.sum((means - means.mean(axis=0)) ** 2, axis=1)))
        value = spread / r0_sq
        pooled_mean = np.sum(means * n[:, None], axis=0) / n.sum()
        pooled_var = np.sum(n[:, None] * (var + (means - pooled_mean) ** 2), axis=0) / n.sum()
        ll_one = float(np.sum(-0.5 * n.sum() * (np.log(2 * math.pi * pooled_var) + 1.0)))
        ll_many = float(np.sum(-0.5 * n[:, None] * (np.log(2 * math.pi * var) + 1.0)))
        N = float(n.sum())
        bic_one = -2.0 * ll_one + 2 * d * math.log(N)
        bic_many = -2.0 * ll_many + 2 * d * len(n) * math.log(N)
        indicators.append(
            Indicator(
                name="pulse_center_dispersion",
                model=run.model,
                value=value,
                threshold=1.0,
                passed=bool(value >= 1.0),
                inputs={"r0_sq": r0_sq, "centre_spread": spread, "delta_bic": bic_one - bic_many},
            )
        )
    return _report("pulse_centres", config, dets, runs, indicators)


def _pair_indicators(model: str, plus: FArray, minus: FArray) -> list[Indicator]:
    pulses = plus.size
    if pulses < 2:
        raise TooFewPulses(f"pair statistics need at least 2 pulses, got {pulses}")
    mp, mm = float(np.mean(plus)), float(np.mean(minus))
    if mp <= 0.0 or mm <= 0.0:
        raise ZeroCounts("a side detector recorded nothing")
    threshold = math.sqrt(float(stats.chi2.ppf(CONFIDENCE, pulses - 1)) / pulses)
    out = []
    ok = True
    inputs: dict[str, float] = {"mean_plus": mp, "mean_minus": mm}
    for label, arr, mean in (("plus", plus, mp), ("minus", minus, mm)):
        ratio = float(np.sqrt(np.mean((arr - mean) ** 2))) / math.sqrt(mean)
        inputs[f"dispersion_{label}"] = ratio
        ok = ok and ratio > threshold
    out.append(
        Indicator(
            name="pair_count_dispersion",
            model=model,
            value=min(inputs["dispersion_plus"], inputs["dispersion_minus"]),
            threshold=threshold,
            passed=bool(ok),
            confidence=CONFIDENCE,
            inputs=inputs,
        )
    )
    nbar = math.sqrt(mp * mm)
    imbalance = float(np.mean(np.abs(plus * mm / nbar - minus * mp / nbar)))
    out.append(
        Indicator(
            name="pair_imbalance",
            model=model,
            value=imbalance,
            threshold=2.0 * math.sqrt(nbar),
            passed=bool(imbalance > 2.0 * math.sqrt(nbar)),
            inputs={"mean_geometric": nbar},
        )
    )
    return out


def exp5_pair_correlation(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """Dispersion and imbalance of counts in two symmetric side detectors."""
    dets = list(detectors or default_detectors(config, "pair"))
    runs = _paired(config, dets)

    def indicate(run: BeamRun) -> list[Indicator]:
        plus = run.counts("plus").astype(np.float64)
        return _pair_indicators(run.model, plus, run.counts("minus").astype(np.float64))

    indicators, notes = _per_run(config, runs, indicate)
    return _report("pair_correlation", config, dets, runs, indicators, notes)


def exp6_half_planes(
    config: BeamConfig, detectors: Sequence[DetectorSpec] | None = None
) -> ExperimentReport:
    """Pair statistics on half-plane detectors with counts corrected for pulse-size fluctuations."""
    dets = list(detectors or default_detectors(config, "half_plane"))
    runs = _paired(config, dets)

    def indicate(run: BeamRun) -> list[Indicator]:
        plus = run.counts("plus").astype(np.float64)
        minus = run.counts("minus").astype(np.float64)
        total = plus + minus
        if np.any(total <= 0):
            raise ZeroCounts("a pulse left both half-planes empty")
        factor = (plus.mean() + minus.mean()) / total
        return _pair_indicators(run.model, plus * factor, minus * factor)

    indicators, notes = _per_run(config, runs, indicate)
    return _report("half_planes", config, dets, runs, indicators, notes)


EXPERIMENTS: dict[int, Callable[[BeamConfig, Sequence[DetectorSpec] | None], ExperimentReport]] = {
    1: exp1_concentration,
    2: exp2_side_suppression,
    3: exp3_rate_jitter,
    4: exp4_pulse_centres,
    5: exp5_pair_correlation,
    6: exp6_half_planes,
}


def decompose_density(
    x: npt.ArrayLike, rho: npt.ArrayLike, lambda0: float
) -> tuple[FArray, FArray]:
    """
    Split a density into a slowly varying envelope and an oscillating factor in ``[0, 1]``.

    The envelope is the running maximum over one wavelength ``lambda0``, smoothed
    over the same window.
    """
    xa = np.asarray(x, dtype=np.float64)
    ra = np.asarray(rho, dtype=np.float64)
    if xa.size < 3:
        raise InvariantViolation("BEAM-003 density needs at least 3 samples")
    k = max(1, int(round(lambda0 / float(xa[1] - xa[0]))))
    k += 1 - k % 2
    pad = k // 2
    padded = np.pad(ra, pad, mode="edge")
    running = np.lib.stride_tricks.sliding_window_view(padded, k).max(axis=1)
    kernel = np.ones(k) / k
    envelope = np.convolve(np.pad(running, pad, mode="edge"), kernel, mode="valid")
    envelope = np.maximum(envelope, ra)
    phase = np.divide(ra, envelope, out=np.zeros_like(ra), where=envelope > 0.0)
    return envelope, np.clip(phase, 0.0, 1.0)
