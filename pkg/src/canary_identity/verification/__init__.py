"""Structural checks: reachability model, write-set conformance, seeded fuzzing."""

from .fuzz import FuzzReport, fuzz, run_seed
from .model import InvariantReport, ModelState, enumerate_reachable
from .writesets import DECLARED_WRITE_SETS, check_write_sets, lint_module, lint_source

__all__ = [
    "DECLARED_WRITE_SETS",
    "FuzzReport",
    "InvariantReport",
    "ModelState",
    "check_write_sets",
    "enumerate_reachable",
    "fuzz",
    "lint_module",
    "lint_source",
    "run_seed",
]
