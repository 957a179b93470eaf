"""Deterministic and subquantum phase-space models of free and slit-diffracted particles."""

from ._version import __version__

__all__ = ["__version__"]
