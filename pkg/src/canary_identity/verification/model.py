"""Explicit-state reachability check of the single-job canary model.

The model abstracts scheduling away but keeps transition order and each
transition's write set. Versions are indices ``0..n_versions-1``; every
name starts at version 0. The identity hash is a projection: the manifest
tag alone in ``ican`` mode, the tag plus both version maps in ``strawman``
mode.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from ..pipeline import JobStatus, is_legal

S = JobStatus
MANIFEST_TAG = "M0"
INVARIANTS = ("IdentityInvariant", "StateInvariant", "VInvariant", "VpInvariant")
HASH_MODES = ("ican", "strawman")


@dataclass(frozen=True, order=True)
class ModelState:
    status: JobStatus
    V: Tuple[int, ...]
    Vp: Tuple[Optional[int], ...]
    manifest_tag: str = MANIFEST_TAG

    def describe(self) -> str:
        vp = ",".join("-" if v is None else str(v) for v in self.Vp)
        return f"{self.status.value} V=({','.join(map(str, self.V))}) Vp=({vp})"


Step = Tuple[str, ModelState]


def initial_state(n_names: int) -> ModelState:
    return ModelState(S.PENDING, (0,) * n_names, (None,) * n_names)


def successors(
    s: ModelState, n_versions: int, rollback_guard: bool = True
) -> Iterator[Step]:
    """Enumerate ``(action, next_state)`` pairs.

    Seven success-path actions plus the three failure branches (validator
    reject, shadow reject, canary rollback). With ``rollback_guard=False`` a
    crash in the canary window ends in ``failed`` and leaves Vp set.
    """
    st = s.status
    if st is S.PENDING:
        yield "Validate", ModelState(S.VALIDATING, s.V, s.Vp, s.manifest_tag)
    elif st is S.VALIDATING:
        yield "ValidatorPass", ModelState(S.SHADOW_RUNNING, s.V, s.Vp, s.manifest_tag)
        yield "ValidatorReject", ModelState(S.REJECTED, s.V, s.Vp, s.manifest_tag)
    elif st is S.SHADOW_RUNNING:
        yield "ShadowPass", ModelState(S.SHADOW_PASSED, s.V, s.Vp, s.manifest_tag)
        yield "ShadowFail", ModelState(S.REJECTED, s.V, s.Vp, s.manifest_tag)
    elif st is S.SHADOW_PASSED:
        for n in range(len(s.V)):
            if s.Vp[n] is not None:
                continue
            for v in range(n_versions):
                if v == s.V[n]:
                    continue
                vp = list(s.Vp)
                vp[n] = v
                yield f"EnterCanary({n},{v})", ModelState(S.CANARY_RUNNING, s.V, tuple(vp), s.manifest_tag)
    elif st in (S.CANARY_RUNNING, S.CANARY_PROMOTED):
        if st is S.CANARY_RUNNING:
            yield "MetricsPass", ModelState(S.CANARY_PROMOTED, s.V, s.Vp, s.manifest_tag)
        else:
            for n, v in enumerate(s.Vp):
                if v is None:
                    continue
                new_v = list(s.V)
                new_v[n] = v
                vp = list(s.Vp)
                vp[n] = None
                yield "AtomicPromote", ModelState(S.PROMOTED, tuple(new_v), tuple(vp), s.manifest_tag)
        if rollback_guard:
            yield "Rollback", ModelState(S.ROLLED_BACK, s.V, (None,) * len(s.V), s.manifest_tag)
        else:
            yield "CrashNoGuard", ModelState(S.FAILED, s.V, s.Vp, s.manifest_tag)


def hash_projection(s: ModelState, hash_mode: str) -> tuple:
    if hash_mode == "strawman":
        return (s.manifest_tag, s.V, s.Vp)
    return (s.manifest_tag,)


def _vp_ok(s: ModelState) -> bool:
    set_count = sum(v is not None for v in s.Vp)
    if s.status in (S.CANARY_RUNNING, S.CANARY_PROMOTED):
        return set_count == 1
    return set_count == 0


@dataclass
class InvariantReport:
    n_names: int
    n_versions: int
    hash_mode: str
    states_explored: int = 0
    max_depth: int = 0
    transitions: int = 0
    violations: List[Tuple[str, List[str]]] = field(default_factory=list)
    reachable: Dict[ModelState, int] = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    def violated(self, name: str) -> List[List[str]]:
        return [trace for inv, trace in self.violations if inv == name]

    def text(self) -> str:
        lines = [
            f"model: names={self.n_names} versions={self.n_versions} mode={self.hash_mode}",
            f"states explored: {self.states_explored}, max depth: {self.max_depth}, "
            f"transitions: {self.transitions}",
        ]
        for inv in INVARIANTS:
            traces = self.violated(inv)
            lines.append(f"  {inv}: {'PASS' if not traces else f'FAIL ({len(traces)} counterexamples)'}")
            if traces:
                lines.extend("      " + step for step in traces[0])
        return "\n".join(lines)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["invariant", "states", "depth", "violations"])
        for inv in INVARIANTS:
            w.writerow([inv, self.states_explored, self.max_depth, len(self.violated(inv))])
        return buf.getvalue()


def _trace(parents: Dict[ModelState, Optional[Step]], end: ModelState, last: Optional[Step] = None) -> List[str]:
    steps: List[str] = []
    if last is not None:
        steps.append(f"{last[0]} -> {last[1].describe()}")
    cur = end
    while parents[cur] is not None:
        action, prev = parents[cur]
        steps.append(f"{action} -> {cur.describe()}")
        cur = prev
    steps.append(f"Init -> {cur.describe()}")
    return list(reversed(steps))


def enumerate_reachable(
    n_names: int,
    n_versions: int,
    hash_mode: str = "ican",
    *,
    rollback_guard: bool = True,
    successor_fn: Optional[Callable[..., Iterator[Step]]] = None,
) -> InvariantReport:
    """Breadth-first exploration with all four invariants checked on every state.

    ``max_depth`` counts states on the longest shortest path (the initial
    state has depth 1).
    """
    if n_names < 1:
        raise ValueError("n_names must be at least 1")
    if n_versions < 2:
        raise ValueError("n_versions must be at least 2")
    if hash_mode not in HASH_MODES:
        raise ValueError(f"hash_mode must be one of {HASH_MODES}")
    succ = successor_fn or successors
    report = InvariantReport(n_names, n_versions, hash_mode)
    init = initial_state(n_names)
    baseline = hash_projection(init, hash_mode)
    parents: Dict[ModelState, Optional[Step]] = {init: None}
    depth = {init: 1}
    queue = deque([init])
    flagged = set()

    def flag(name: str, state: ModelState, trace: List[str]) -> None:
        if (name, state) not in flagged:
            flagged.add((name, state))
            report.violations.append((name, trace))

    while queue:
        s = queue.popleft()
        if hash_projection(s, hash_mode) != baseline:
            flag("IdentityInvariant", s, _trace(parents, s))
        if not isinstance(s.status, JobStatus):
            flag("StateInvariant", s, _trace(parents, s))
        if not _vp_ok(s):
            flag("VpInvariant", s, _trace(parents, s))
        for action, t in succ(s, n_versions, rollback_guard):
            report.transitions += 1
            if t.manifest_tag != s.manifest_tag:
                flag("IdentityInvariant", t, _trace(parents, s, (action, t)))
            if not isinstance(t.status, JobStatus) or not is_legal(s.status, t.status):
                flag("StateInvariant", t, _trace(parents, s, (action, t)))
            if t.V != s.V and action != "AtomicPromote":
                flag("VInvariant", t, _trace(parents, s, (action, t)))
            if t not in parents:
                parents[t] = (action, s)
                depth[t] = depth[s] + 1
                queue.append(t)

    report.states_explored = len(parents)
    report.max_depth = max(depth.values())
    report.reachable = depth
    return report
