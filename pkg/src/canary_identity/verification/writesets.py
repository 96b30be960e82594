"""Write-set conformance: declared per-transition writes vs. what a run did.

Observed writes come from the :class:`~canary_identity.identity.ManifestGuard`
attached to the agent state during a pipeline run. A second, purely static
check walks a module's AST for assignments to manifest field names.
"""

from __future__ import annotations

import ast
import inspect
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Set, Tuple

from ..identity import MANIFEST_FIELDS

FIELD_IDS = frozenset({"V", "Vp", "audit_log", "job_metadata", *MANIFEST_FIELDS})

# Table of pipeline transitions and the structures each one writes. Every
# transition advances job.status, recorded as job_metadata.
DECLARED_WRITE_SETS: Dict[str, FrozenSet[str]] = {
    "pending->validating": frozenset({"job_metadata"}),
    "validating->shadow_running": frozenset({"job_metadata"}),
    "shadow_running->shadow_passed": frozenset({"job_metadata", "audit_log"}),
    "shadow_passed->canary_running": frozenset({"job_metadata", "Vp", "audit_log"}),
    "canary_running->canary_promoted": frozenset({"job_metadata", "audit_log"}),
    "canary_promoted->promoted": frozenset({"job_metadata", "V", "Vp", "audit_log"}),
    "*->rolled_back": frozenset({"job_metadata", "Vp", "audit_log"}),
}

# Arcs outside the seven-row table: rejections and invariant faults.
EXTRA_WRITE_SETS: Dict[str, FrozenSet[str]] = {
    "*->rejected": frozenset({"job_metadata", "audit_log"}),
    "*->failed": frozenset({"job_metadata", "Vp", "audit_log"}),
}

ALL_WRITE_SETS: Dict[str, FrozenSet[str]] = {**DECLARED_WRITE_SETS, **EXTRA_WRITE_SETS}


@dataclass
class WriteSetReport:
    violations: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def check_write_sets(
    declared: Mapping[str, Iterable[str]], observed: Mapping[str, Iterable[str]]
) -> WriteSetReport:
    """Flag manifest-field writes and writes outside a transition's declared set.

    Each violation is ``(transition, field)``; an undeclared transition
    flags every field it wrote.
    """
    report = WriteSetReport()
    for transition, writes in observed.items():
        allowed = set(declared.get(transition, ()))
        for f in sorted(set(writes)):
            if f in MANIFEST_FIELDS or f not in allowed:
                report.violations.append((transition, f))
    return report


def matches_exactly(
    declared: Mapping[str, Iterable[str]], observed: Mapping[str, Iterable[str]]
) -> Dict[str, Tuple[Set[str], Set[str]]]:
    """Return ``{transition: (missing, unexpected)}`` for every observed transition that differs."""
    diff = {}
    for transition, writes in observed.items():
        want = set(declared.get(transition, ()))
        got = set(writes)
        if want != got:
            diff[transition] = (want - got, got - want)
    return diff


def _attr_name(node: ast.AST) -> str:
    if isinstance(node, ast.Attribute):
        return node.attr
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Subscript):
        sl = node.slice
        if isinstance(sl, ast.Constant) and isinstance(sl.value, str):
            return sl.value
    return ""


def _targets(node: ast.AST) -> Iterable[ast.AST]:
    if isinstance(node, ast.Assign):
        for tgt in node.targets:
            if isinstance(tgt, (ast.Tuple, ast.List)):
                yield from tgt.elts
            else:
                yield tgt
    elif isinstance(node, (ast.AugAssign, ast.AnnAssign)):
        yield node.target
    elif isinstance(node, ast.Call):
        # replace(manifest, h_persona=...) and setattr(obj, "h_env", ...)
        func = node.func
        fname = func.attr if isinstance(func, ast.Attribute) else getattr(func, "id", "")
        if fname == "replace":
            for kw in node.keywords:
                if kw.arg:
                    yield ast.Name(id=kw.arg)
        elif fname == "setattr" and len(node.args) >= 2:
            arg = node.args[1]
            if isinstance(arg, ast.Constant) and isinstance(arg.value, str):
                yield ast.Name(id=arg.value)


def lint_source(source: str) -> List[Tuple[int, str]]:
    """Return ``(lineno, field)`` for every statement that writes a manifest field."""
    hits = []
    for node in ast.walk(ast.parse(source)):
        for tgt in _targets(node):
            name = _attr_name(tgt)
            if name in MANIFEST_FIELDS:
                hits.append((getattr(node, "lineno", 0), name))
    return sorted(hits)


def lint_module(module) -> List[Tuple[int, str]]:
    return lint_source(inspect.getsource(module))
