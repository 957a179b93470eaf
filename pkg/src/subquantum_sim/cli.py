from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError
from scipy import stats

from .config import (
    EvolveSection,
    ExperimentSection,
    GridSection,
    RegimeSection,
    RelaxSection,
    RunConfig,
    SlitsSection,
    load_run_config,
)
from .contracts import ConfigInvalid, InvariantViolation, IoFailure, NonNormalizable, NumericFailure
from .crf import correlated_check, correlated_state, crf_propagate
from .detqm import GridState, HamiltonianSpec, detqm_evolve, detqm_transport, grid_summary
from .evolution import (
    GaussianState,
    apply_slit,
    concentration,
    density_ip2,
    iterated_slits,
    pipeline_kappa,
    position_amplitude,
    position_width_sq,
    propagate,
    qm_apply_slit,
    qm_propagate,
    qm_wavefunction,
)
from .experiments import EXPERIMENTS, BeamConfig, ModelName, RegimeCheck, regime_ledger
from .kernels import relaxation_decay
from .persistence import ReportEnvelope, save_grid_snapshot, write_csv, write_report
from .quadratics import QuadForm, l2_norm, moments
from .utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

COMMANDS = ("evolve", "slits", "experiment", "relax", "regime")


def _grid(g: GridSection) -> np.ndarray:
    return np.linspace(g.x_min, g.x_max, g.points)


def _envelope(cfg: RunConfig, command: str, **fields: Any) -> ReportEnvelope:
    return ReportEnvelope(
        command=command,
        units=cfg.units,
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
        **fields,
    )


def _safe_concentration(state: GaussianState) -> dict[str, float] | None:
    try:
        r = concentration(state)
    except NonNormalizable:
        return None
    return {"dx": r.dx, "dp": r.dp, "kappa": r.kappa, "center_x": r.center_x}


def _qm_density(psi: QuadForm, xs: np.ndarray) -> np.ndarray:
    return np.abs(psi.evaluate(xs[:, None])) ** 2


def _qm_summary(psi: QuadForm) -> dict[str, float]:
    mu, cov = moments(psi)
    return {"mean_x": float(mu[0]), "width_sq": 2.0 * float(cov[0, 0])}


def cmd_evolve(cfg: RunConfig, out: Path, fmt: str) -> ReportEnvelope:
    sec = cfg.require("evolve")
    assert isinstance(sec, EvolveSection)
    kind = cfg.model.kind
    xs = _grid(sec.grid)
    s = sec.state
    slices: list[dict[str, Any]] = []
    tables: dict[str, dict[str, list[float]]] = {}

    def emit(i: int, t: float, rho: np.ndarray, summary: dict[str, Any]) -> None:
        summary = {"t": t, **summary}
        slices.append(summary)
        name = f"slice_{i:03d}"
        if fmt == "csv":
            write_csv(out / f"{name}.csv", ["x", "rho"], [xs, rho])
        else:
            tables[name] = {"x": xs.tolist(), "rho": rho.tolist()}

    if kind in ("qm", "detqm") and (s.dx is None or (s.dp is None and kind == "detqm")):
        raise ConfigInvalid(f"evolve with {kind} needs a normalizable initial state")
    if kind == "qm":
        assert s.dx is not None
        psi0 = qm_wavefunction(s.x0, s.dx, s.k, cfg.model.hbar)
        for i, t in enumerate(sec.times):
            psi = psi0 if t == 0.0 else qm_propagate(psi0, t, cfg.model.m)
            emit(i, t, _qm_density(psi, xs), _qm_summary(psi))
    elif kind == "subqm_crf":
        crf = cfg.model.crf_params()
        state0 = correlated_state(
            crf, dx=sec.crf_dx, dp=sec.crf_dp, mean_dx=s.dx, mean_dp=s.dp, x0=s.x0, p0=s.p0
        )
        for i, t in enumerate(sec.times):
            st = state0 if t == 0.0 else crf_propagate(state0, t, crf, sec.regime)
            mu, cov = moments(position_amplitude(st))
            rho = stats.norm.pdf(xs, mu[0], np.sqrt(cov[0, 0]))
            rep = correlated_check(st, sec.crf_dx, sec.crf_dp)
            emit(
                i,
                t,
                rho,
                {
                    "dx_rel": rep.dx_rel,
                    "dp_rel": rep.dp_rel,
                    "kappa_rel": rep.kappa_rel,
                    "is_correlated": rep.is_correlated,
                    "particle_width_sq": 2.0 * float(cov[0, 0]),
                },
            )
    else:
        params = cfg.model.params()
        if params.n != 1:
            raise ConfigInvalid("evolve writes one-degree-of-freedom densities; set model.n = 1")
        state0 = GaussianState.product(params, x0=s.x0, p0=s.p0, dx=s.dx, dp=s.dp, k=s.k)
        if kind == "detqm":
            H = (
                HamiltonianSpec.harmonic(params.m[0], sec.omega)
                if sec.potential == "harmonic"
                else HamiltonianSpec.free(params.m[0])
            )
            g = sec.phase_grid
            grid = GridState.from_gaussian(state0, g.nx, g.n_p, g.width)
            for i, t in enumerate(sec.times):
                grid = detqm_evolve(grid, grid.t, t, H)
                rho = np.sum(np.abs(grid.values) ** 2, axis=1) * grid.dp
                emit_x = np.interp(xs, grid.x, rho, left=0.0, right=0.0)
                emit(i, t, emit_x, grid_summary(grid))
                save_grid_snapshot(out / f"grid_{i:03d}.npz", grid)
        else:
            for i, t in enumerate(sec.times):
                st = state0 if t == 0.0 else propagate(state0, t, sec.regime)
                assert isinstance(st, GaussianState)
                emit(
                    i,
                    t,
                    density_ip2(st, xs),
                    {
                        "width_sq": position_width_sq(st),
                        "l2_norm": l2_norm(st.form),
                        "concentration": _safe_concentration(st),
                    },
                )
    return _envelope(
        cfg, "evolve", timestamps=list(sec.times), results={"slices": slices, "tables": tables}
    )


def cmd_slits(cfg: RunConfig, out: Path, fmt: str) -> ReportEnvelope:
    sec = cfg.require("slits")
    assert isinstance(sec, SlitsSection)
    kind = cfg.model.kind
    if kind == "subqm_crf":
        raise ConfigInvalid("slits supports qm, detqm and subqm_rf models")
    xs = _grid(sec.grid)
    slits = [s.spec() for s in sec.slits]
    results: dict[str, Any] = {}
    if kind == "qm":
        psi = qm_apply_slit(QuadForm.unit(1, cfg.model.hbar), slits[0])
        for slit in slits[1:]:
            psi = qm_apply_slit(qm_propagate(psi, sec.gap, cfg.model.m), slit)
        if sec.screen_time > 0.0:
            psi = qm_propagate(psi, sec.screen_time, cfg.model.m)
        rho = _qm_density(psi, xs)
        results["screen"] = _qm_summary(psi)
    else:
        params = cfg.model.params()
        state = GaussianState.product(params)
        if kind == "detqm":
            for j, slit in enumerate(slits):
                if j:
                    state = detqm_transport(state, sec.gap)
                moved = apply_slit(state, slit)
                assert isinstance(moved, GaussianState)
                state = moved
        else:
            moved = iterated_slits(state, slits, sec.gap, sec.regime)
            assert isinstance(moved, GaussianState)
            state = moved
        results["prepared"] = _safe_concentration(state)
        if len(slits) == 2:
            results["kappa_formula"] = pipeline_kappa(
                slits[0].half_width, slits[1].half_width, sec.gap, params
            )
        if sec.screen_time > 0.0:
            state = (
                detqm_transport(state, sec.screen_time)
                if kind == "detqm"
                else _propagated(state, sec.screen_time, sec)
            )
        rho = density_ip2(state, xs)
        results["screen"] = {"width_sq": position_width_sq(state)}
    if fmt == "csv":
        write_csv(out / "screen.csv", ["x", "rho"], [xs, rho])
    else:
        results["table"] = {"x": xs.tolist(), "rho": rho.tolist()}
    total = sec.gap * (len(slits) - 1) + sec.screen_time
    return _envelope(cfg, "slits", timestamps=[total], results=results)


def _propagated(state: GaussianState, T: float, sec: SlitsSection) -> GaussianState:
    out = propagate(state, T, sec.regime)
    assert isinstance(out, GaussianState)
    return out


def _beam_for(beam: BeamConfig, model: ModelName, seed: int) -> BeamConfig:
    data = beam.model_dump()
    data.update(model=model, seed=seed)
    try:
        return BeamConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(f"experiment.beam with model {model}: {exc}") from exc


def cmd_experiment(
    cfg: RunConfig, out: Path, fmt: str, models: Sequence[ModelName] | None = None
) -> ReportEnvelope:
    sec = cfg.require("experiment")
    assert isinstance(sec, ExperimentSection)
    run = EXPERIMENTS[sec.experiment]
    chosen = list(models or sec.models or [sec.beam.model])
    reports = []
    ledger: list[RegimeCheck] = []
    for model in chosen:
        beam = _beam_for(sec.beam, model, cfg.seed)
        report = run(beam, sec.detectors)
        ledger = ledger or report.ledger
        reports.append(report.model_dump(mode="json"))
        if fmt == "csv":
            for name, trace in report.densities.items():
                write_csv(
                    out / f"density_{model}_{name}.csv",
                    ["x", "rho", "envelope", "phase"],
                    [trace.x, trace.rho, trace.envelope, trace.phase],
                )
            for name, records in report.pulses.items():
                detectors = sorted(records[0].counts) if records else []
                write_csv(
                    out / f"counts_{model}_{name}.csv",
                    ["pulse", "n_sent", *detectors],
                    [
                        [r.index for r in records],
                        [r.n_sent for r in records],
                        *[[r.counts[d] for r in records] for d in detectors],
                    ],
                )
        for ind in report.indicators:
            logger.info(
                "experiment %d %s on %s: value=%.6g threshold=%.6g passed=%s",
                sec.experiment,
                ind.name,
                ind.model,
                ind.value,
                ind.threshold,
                ind.passed,
            )
    return _envelope(
        cfg,
        "experiment",
        results={"experiment": sec.experiment, "reports": reports},
        ledger=ledger,
    )


def cmd_relax(cfg: RunConfig, out: Path, fmt: str) -> ReportEnvelope:
    sec = cfg.require("relax")
    assert isinstance(sec, RelaxSection)
    params = cfg.model.params()
    if params.n != 1:
        raise ConfigInvalid("relax works on one degree of freedom; set model.n = 1")
    beta = float(params.beta[0])
    phi = qm_wavefunction(sec.p0, sec.dp, sec.l, params.hbar)
    norms, grads = [], []
    for bt in sec.beta_t:
        n, g = relaxation_decay(phi, bt / beta, params, sec.c0)
        norms.append(n)
        grads.append(g)
    bt_arr = np.asarray(sec.beta_t)
    g_sq = np.asarray(grads) ** 2
    results: dict[str, Any] = {"beta": beta}
    if bt_arr.size >= 2 and np.all(g_sq > 0.0):
        results["log_slope"] = float(np.polyfit(bt_arr, np.log(g_sq), 1)[0])
    if fmt == "csv":
        write_csv(
            out / "relax.csv",
            ["beta_t", "norm", "grad_norm", "grad_norm_sq"],
            [bt_arr, norms, grads, g_sq],
        )
    else:
        results["table"] = {
            "beta_t": bt_arr.tolist(),
            "norm": norms,
            "grad_norm": grads,
            "grad_norm_sq": g_sq.tolist(),
        }
    return _envelope(cfg, "relax", timestamps=(bt_arr / beta).tolist(), results=results)


def format_ledger(ledger: Sequence[RegimeCheck]) -> str:
    rows = [f"{'check':<24} {'ratio':>12} {'limit':>8}  status"]
    for chk in ledger:
        status = "n/a" if not chk.applicable else ("pass" if chk.passed else "FAIL")
        rows.append(f"{chk.name:<24} {chk.ratio:>12.4e} {chk.threshold:>8.2g}  {status}")
    return "\n".join(rows)


def cmd_regime(cfg: RunConfig) -> ReportEnvelope:
    sec = cfg.require("regime")
    assert isinstance(sec, RegimeSection)
    ledger = regime_ledger(sec.beam, sec.detectors)
    print(format_ledger(ledger))
    return _envelope(cfg, "regime", ledger=ledger)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subqm", description="Subquantum relaxation model toolkit")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--log-json", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None)
        s.add_argument("--format", choices=["csv", "json"], default="csv")
        s.add_argument("--units", choices=["si", "natural"], default=None)
        if name == "experiment":
            s.add_argument(
                "--model",
                action="append",
                choices=["qm", "detqm", "subqm_rf", "subqm_crf"],
                default=None,
            )
    return p


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config)
    update: dict[str, Any] = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.units is not None:
        update["units"] = args.units
    if not update:
        return cfg
    try:
        return RunConfig.model_validate({**cfg.model_dump(), **update})
    except ValidationError as exc:
        raise ConfigInvalid(str(exc)) from exc


def _dispatch(args: argparse.Namespace) -> None:
    cfg = _load(args)
    out = Path(args.out) if args.out else Path("artifacts") / args.cmd
    if args.cmd == "evolve":
        env = cmd_evolve(cfg, out, args.format)
    elif args.cmd == "slits":
        env = cmd_slits(cfg, out, args.format)
    elif args.cmd == "experiment":
        env = cmd_experiment(cfg, out, args.format, args.model)
    elif args.cmd == "relax":
        env = cmd_relax(cfg, out, args.format)
    else:
        env = cmd_regime(cfg)
        if args.out is None:
            return
    write_report(out / "report.json", env)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(logging, args.log_level), json=args.log_json)
    try:
        _dispatch(args)
    except (ConfigInvalid, FileNotFoundError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (NumericFailure, InvariantViolation) as exc:
        logger.error("numeric failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except (IoFailure, OSError) as exc:
        logger.error("i/o failure: %s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
