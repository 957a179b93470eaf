from __future__ import annotations

import pathlib
import sys

import pytest

# Make src-layout importable for local `pytest` runs without `pip install -e .`
_ROOT = pathlib.Path(__file__).resolve().parents[1]
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

DATA = _ROOT / "data"

from subquantum_sim.kernels import ModelParams  # noqa: E402


@pytest.fixture()
def natural() -> ModelParams:
    return ModelParams.natural()


@pytest.fixture()
def slow_relaxation() -> ModelParams:
    """hbar = m = 1 with beta = 0.1."""
    return ModelParams.from_tau(1.0, 10.0)


@pytest.fixture()
def config_path(tmp_path: pathlib.Path) -> str:
    # copy the natural demo but shrink the beam for faster tests
    src = DATA / "natural_demo.yaml"
    dst = tmp_path / "natural_demo.yaml"
    text = src.read_text(encoding="utf-8")
    text = text.replace("n_pulses: 20", "n_pulses: 4")
    text = text.replace("n_per_pulse: 5000", "n_per_pulse: 500")
    dst.write_text(text, encoding="utf-8")
    return str(dst)
