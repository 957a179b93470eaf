from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic.functional_validators import field_validator

from .contracts import ConfigInvalid
from .crf import CrfParams
from .evolution import SlitSpec
from .experiments import BeamConfig, DetectorSpec, ModelName
from .kernels import ModelParams, Regime
from .utils import load_config

logger = logging.getLogger(__name__)

Units = Literal["si", "natural"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    """Model family and its constants. Give either ``tau`` or ``a`` (``tau^2 = a m``)."""

    kind: ModelName = "subqm_rf"
    m: float = Field(default=1.0, gt=0.0)
    hbar: float = Field(default=1.0, gt=0.0)
    tau: float | None = Field(default=None, gt=0.0)
    a: float | None = Field(default=None, gt=0.0)
    n: int = Field(default=1, ge=1)
    a0: float | None = Field(default=None, gt=0.0)
    a1: float | None = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def _constants(self) -> ModelSection:
        if self.tau is not None and self.a is not None:
            raise ValueError("give tau or a, not both")
        if self.kind == "subqm_crf" and (self.a0 is None or self.a1 is None):
            raise ValueError("subqm_crf needs a0 and a1")
        return self

    def params(self) -> ModelParams:
        if self.kind == "subqm_crf":
            return self.crf_params().model_params()
        if self.a is not None:
            return ModelParams.create(self.m, self.a, self.hbar, self.n)
        tau = 1.0 if self.tau is None else self.tau
        return ModelParams.from_tau(self.m, tau, self.hbar, self.n)

    def crf_params(self) -> CrfParams:
        if self.a0 is None or self.a1 is None:
            raise ConfigInvalid("model.a0 and model.a1 are required for subqm_crf")
        return CrfParams(n=self.n, m=self.m, a0=self.a0, a1=self.a1, hbar=self.hbar)


class StateSection(_Section):
    """Initial Gaussian; ``dx``/``dp`` left out means flat in that variable."""

    x0: float = 0.0
    p0: float = 0.0
    dx: float | None = Field(default=1.0, gt=0.0)
    dp: float | None = Field(default=None, gt=0.0)
    k: float = 0.0


class GridSection(_Section):
    x_min: float = -10.0
    x_max: float = 10.0
    points: int = Field(default=401, ge=3, le=1_000_000)

    @model_validator(mode="after")
    def _ordered(self) -> GridSection:
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")
        return self


class PhaseGridSection(_Section):
    """DetQM phase-space grid size; the window is fitted around the initial state."""

    nx: int = Field(default=128, ge=8, le=4096)
    n_p: int = Field(default=128, ge=8, le=4096)
    width: float = Field(default=8.0, gt=0.0)


class EvolveSection(_Section):
    state: StateSection = Field(default_factory=StateSection)
    times: list[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0])
    regime: Regime = "exact"
    grid: GridSection = Field(default_factory=GridSection)
    phase_grid: PhaseGridSection = Field(default_factory=PhaseGridSection)
    potential: Literal["free", "harmonic"] = "free"
    omega: float = Field(default=1.0, gt=0.0)
    crf_dx: float = Field(default=0.5, gt=0.0)
    crf_dp: float = Field(default=0.5, gt=0.0)

    @field_validator("times")
    @classmethod
    def _times(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("times must not be empty")
        if any(t < 0.0 for t in v):
            raise ValueError("times must be >= 0")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("times must be strictly increasing")
        return [float(t) for t in v]


class SlitSection(_Section):
    center: float = 0.0
    half_width: float = Field(gt=0.0)

    def spec(self) -> SlitSpec:
        return SlitSpec(self.center, self.half_width)


class SlitsSection(_Section):
    slits: list[SlitSection] = Field(min_length=1)
    gap: float = Field(default=1.0, gt=0.0)
    screen_time: float = Field(default=1.0, ge=0.0)
    regime: Regime = "exact"
    grid: GridSection = Field(default_factory=GridSection)


class ExperimentSection(_Section):
    experiment: int = Field(default=1, ge=1, le=6)
    beam: BeamConfig
    detectors: list[DetectorSpec] | None = None
    models: list[ModelName] | None = None


class RelaxSection(_Section):
    """Momentum amplitude ``exp{-(p - p0)^2/(2 dp^2) + (i/hbar) l p}`` and a grid of ``beta t``."""

    p0: float = 0.0
    dp: float = Field(default=1.0, gt=0.0)
    l: float = 0.0  # noqa: E741
    c0: float = Field(default=1.0, gt=0.0)
    beta_t: list[float] = Field(default_factory=lambda: [float(v) for v in range(11)])

    @field_validator("beta_t")
    @classmethod
    def _grid(cls, v: list[float]) -> list[float]:
        if not v or any(t < 0.0 for t in v):
            raise ValueError("beta_t must be a non-empty list of values >= 0")
        return sorted(float(t) for t in v)


class RegimeSection(_Section):
    beam: BeamConfig
    detectors: list[DetectorSpec] | None = None


class RunConfig(_Section):
    seed: int = Field(default=0, ge=0, lt=2**64)
    units: Units = "natural"
    model: ModelSection = Field(default_factory=ModelSection)
    evolve: EvolveSection | None = None
    slits: SlitsSection | None = None
    experiment: ExperimentSection | None = None
    relax: RelaxSection | None = None
    regime: RegimeSection | None = None

    @model_validator(mode="after")
    def _natural_units(self) -> RunConfig:
        # Natural units pin hbar = m = 1; beta = 1 is the default (tau = 1) but may be set.
        if self.units != "natural":
            return self
        if self.model.hbar != 1.0 or self.model.m != 1.0:
            raise ValueError("natural units fix model.hbar = 1 and model.m = 1")
        for name in ("experiment", "regime"):
            section = getattr(self, name)
            if section is None:
                continue
            beam = section.beam
            if beam.hbar != 1.0 or not (beam.photon or beam.m == 1.0):
                raise ValueError(f"natural units fix {name}.beam.hbar = 1 and {name}.beam.m = 1")
        return self

    def require(self, section: str) -> BaseModel:
        value = getattr(self, section)
        if value is None:
            raise ConfigInvalid(f"config has no '{section}' section")
        return value


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_run_config(data: dict[str, object]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(_describe(exc)) from exc


def load_run_config(path: str | Path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    cfg = parse_run_config(load_config(path))
    logger.debug("loaded config %s (units=%s)", path, cfg.units)
    return cfg
