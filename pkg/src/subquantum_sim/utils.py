from __future__ import annotations

import logging
import os
import zlib
from pathlib import Path
from typing import Any

import numpy as np
import structlog
import yaml

from .contracts import ConfigInvalid

logger = logging.getLogger(__name__)

THREADS_ENV = "SUBQM_THREADS"


def setup_logging(level: int = logging.INFO, *, json: bool = False) -> None:
    """Route stdlib log records through structlog's renderer on the root handler."""
    renderer: Any
    if json:
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.processors.KeyValueRenderer(
            key_order=["timestamp", "level", "logger", "event"]
        )
    formatter = structlog.stdlib.ProcessorFormatter(
        processor=renderer,
        foreign_pre_chain=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="iso"),
        ],
    )
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    root.addHandler(handler)
    root.setLevel(level)


def load_config(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(path))
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{p}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("Config must be a mapping")
    return data


def derive_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for a named stream; identical inputs give identical draws."""
    if seed < 0 or index < 0:
        raise ConfigInvalid(f"seed and stream index must be >= 0, got {seed}, {index}")
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode("utf-8")), int(index)])


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigInvalid(f"{THREADS_ENV} must be >= 1, got {n}")
    return n
