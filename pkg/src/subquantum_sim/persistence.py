from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

from ._version import __version__
from .contracts import IoFailure
from .detqm import GridState
from .experiments import RegimeCheck

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
CSV_FORMAT = "%.16e"


class ReportEnvelope(BaseModel):
    """Versioned wrapper around every JSON result the command line writes."""

    model_config = ConfigDict(extra="forbid")

    schema_version: str = SCHEMA_VERSION
    tool_version: str = __version__
    command: str
    units: str
    seed: int
    config: dict[str, Any]
    timestamps: list[float] = Field(default_factory=list)
    results: dict[str, Any] = Field(default_factory=dict)
    ledger: list[RegimeCheck] = Field(default_factory=list)


def _compute_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            h.update(chunk)
    return h.hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".sha256")


def _seal(path: Path) -> None:
    _sidecar(path).write_text(_compute_sha256(path), encoding="utf-8")


def _verify(path: Path) -> None:
    sha_path = _sidecar(path)
    if not path.exists() or not sha_path.exists():
        raise IoFailure(f"{path}: artifact or checksum missing")
    if sha_path.read_text(encoding="utf-8").strip() != _compute_sha256(path):
        raise IoFailure(f"{path}: sha256 mismatch")


def write_csv(
    path: str | Path, header: Sequence[str], columns: Sequence[npt.ArrayLike]
) -> Path:
    """Comma-separated columns with a header row and 17 significant digits."""
    p = Path(path)
    data = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    if data.shape[1] != len(header):
        raise IoFailure(f"{p}: {len(header)} header fields for {data.shape[1]} columns")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(p, data, fmt=CSV_FORMAT, delimiter=",", header=",".join(header), comments="")
    except OSError as exc:
        raise IoFailure(f"cannot write {p}: {exc}") from exc
    logger.info("wrote %s (%d rows)", p, data.shape[0])
    return p


def read_csv(path: str | Path) -> tuple[list[str], npt.NDArray[np.float64]]:
    p = Path(path)
    try:
        with p.open(encoding="utf-8") as f:
            header = f.readline().strip().split(",")
        data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise IoFailure(f"cannot read {p}: {exc}") from exc
    return header, data


def write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    """Sorted, indented JSON plus a ``.sha256`` sidecar."""
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _seal(p)
    except OSError as exc:
        raise IoFailure(f"cannot write {p}: {exc}") from exc
    logger.info("wrote %s", p)
    return p


def read_json(path: str | Path) -> dict[str, Any]:
    """Load JSON written by :func:`write_json` after checking its sidecar."""
    p = Path(path)
    try:
        _verify(p)
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise IoFailure(f"{p}: top level is not an object")
    return data


def write_report(path: str | Path, envelope: ReportEnvelope) -> Path:
    return write_json(path, envelope.model_dump(mode="python"))


def read_report(path: str | Path) -> ReportEnvelope:
    return ReportEnvelope.model_validate(read_json(path))


def save_grid_snapshot(path: str | Path, state: GridState) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            p,
            schema_version=SCHEMA_VERSION,
            x=state.x,
            p=state.p,
            values=state.values,
            t=np.array([state.t], dtype=np.float64),
            hbar=np.array([state.hbar], dtype=np.float64),
        )
        _seal(p)
    except OSError as exc:
        raise IoFailure(f"cannot write {p}: {exc}") from exc
    return p


def load_grid_snapshot(path: str | Path) -> GridState:
    p = Path(path)
    _verify(p)
    with np.load(p, allow_pickle=False) as data:
        return GridState(
            np.array(data["x"]),
            np.array(data["p"]),
            np.array(data["values"]),
            float(data["t"][0]),
            float(data["hbar"][0]),
        )
