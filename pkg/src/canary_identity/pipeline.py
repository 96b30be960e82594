"""Canary evolution pipeline: job store, state machine, promote and rollback.

A job walks ``pending -> validating -> shadow_running -> shadow_passed ->
canary_running -> canary_promoted -> promoted``. The provisional map gets the
target version on canary entry; the active map changes only in the atomic
promote. Any fault inside the body runs the rollback closure (clear the
provisional entry, mark ``rolled_back``) before the fault propagates.

All transition write sets, admission checks and both version maps are
guarded by one re-entrant lock owned by the :class:`JobStore`. Critical
sections never await, so the same lock serves coroutines on the event loop
and plain threads (HTTP workers, stress tests).
"""

from __future__ import annotations

import asyncio
import csv
import enum
import inspect
import itertools
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Iterable, List, Optional, Set, Tuple

from .audit import AuditKind
from .identity import (
    AgentState,
    ManifestFrozenError,
    ManifestGuard,
    SemVer,
    UnknownNameError,
    hook_scope,
)
from .metrics import CanaryMetrics, Decision, evaluate_tick

log = logging.getLogger(__name__)

DEFAULT_SOAK_TICKS = 5
DEFAULT_TICK_INTERVAL = 0.02
DEFAULT_THRESHOLD = 0


class JobStatus(str, enum.Enum):
    PENDING = "pending"
    VALIDATING = "validating"
    SHADOW_RUNNING = "shadow_running"
    SHADOW_PASSED = "shadow_passed"
    CANARY_RUNNING = "canary_running"
    CANARY_PROMOTED = "canary_promoted"
    PROMOTED = "promoted"
    REJECTED = "rejected"
    ROLLED_BACK = "rolled_back"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL


S = JobStatus
TERMINAL = frozenset({S.PROMOTED, S.REJECTED, S.ROLLED_BACK, S.FAILED})
SUCCESS_PATH = (
    S.PENDING,
    S.VALIDATING,
    S.SHADOW_RUNNING,
    S.SHADOW_PASSED,
    S.CANARY_RUNNING,
    S.CANARY_PROMOTED,
    S.PROMOTED,
)

# Abort or a hook fault may roll back any live job, and an invariant fault
# may fail it; validator/shadow rejections add the remaining arcs.
LEGAL_TRANSITIONS: Dict[JobStatus, Set[JobStatus]] = {
    S.PENDING: {S.VALIDATING, S.ROLLED_BACK, S.FAILED},
    S.VALIDATING: {S.SHADOW_RUNNING, S.REJECTED, S.ROLLED_BACK, S.FAILED},
    S.SHADOW_RUNNING: {S.SHADOW_PASSED, S.REJECTED, S.ROLLED_BACK, S.FAILED},
    S.SHADOW_PASSED: {S.CANARY_RUNNING, S.ROLLED_BACK, S.FAILED},
    S.CANARY_RUNNING: {S.CANARY_PROMOTED, S.ROLLED_BACK, S.FAILED},
    S.CANARY_PROMOTED: {S.PROMOTED, S.ROLLED_BACK, S.FAILED},
    S.PROMOTED: set(),
    S.REJECTED: set(),
    S.ROLLED_BACK: set(),
    S.FAILED: set(),
}


def is_legal(src: JobStatus, dst: JobStatus) -> bool:
    return dst in LEGAL_TRANSITIONS[src]


def transition_label(src: JobStatus, dst: JobStatus) -> str:
    """Name a transition the way write sets are declared: families collapse to ``*``."""
    if dst in (S.ROLLED_BACK, S.REJECTED, S.FAILED):
        return f"*->{dst.value}"
    return f"{src.value}->{dst.value}"


class PipelineError(Exception):
    pass


class UpgradeConflict(PipelineError):
    def __init__(self, name: str, job_id: str) -> None:
        super().__init__(f"capability {name!r} already has active job {job_id}")
        self.name = name
        self.job_id = job_id


class UnknownJob(PipelineError, KeyError):
    def __init__(self, job_id: str) -> None:
        super().__init__(f"no such job: {job_id}")
        self.job_id = job_id


class InvariantFault(PipelineError):
    pass


class _Halted(Exception):
    """The job reached a terminal state behind our back (abort wins)."""


@dataclass
class LogRow:
    status: JobStatus
    identity_hex: str
    timestamp_ns: int


@dataclass
class EvolutionJob:
    job_id: str
    capability: str
    target_version: SemVer
    prior_version: SemVer
    status: JobStatus = S.PENDING
    soak_ticks: int = DEFAULT_SOAK_TICKS
    tick_interval: float = DEFAULT_TICK_INTERVAL
    metrics_threshold: int = DEFAULT_THRESHOLD
    transition_log: List[LogRow] = field(default_factory=list)
    failure_reason: Optional[str] = None
    promote_applied: bool = False
    ticks_observed: int = 0

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL

    def to_json(self) -> Dict[str, Any]:
        return {
            "job_id": self.job_id,
            "capability": self.capability,
            "target_version": str(self.target_version),
            "prior_version": str(self.prior_version),
            "status": self.status.value,
            "identity_hash_hex": self.transition_log[-1].identity_hex if self.transition_log else None,
            "transition_log": [
                {"status": r.status.value, "identity_hash_hex": r.identity_hex, "timestamp_ns": r.timestamp_ns}
                for r in self.transition_log
            ],
            "failure_reason": self.failure_reason,
        }


def _accept(name: str, version: SemVer) -> bool:
    return True


def _no_traffic(window_start: datetime) -> CanaryMetrics:
    return CanaryMetrics(window_start)


def _noop(job: "EvolutionJob") -> None:
    return None


@dataclass
class PipelineHooks:
    validator: Callable[[str, SemVer], Any] = _accept
    shadow_replay: Callable[[str, SemVer], Any] = _accept
    metrics_provider: Callable[[datetime], Any] = _no_traffic
    on_promote: Callable[[EvolutionJob], Any] = _noop
    on_rollback: Callable[[EvolutionJob], Any] = _noop


async def _call(fn: Callable, *args, hook: str = "hook"):
    with hook_scope(hook):
        result = fn(*args)
        if inspect.isawaitable(result):
            result = await result
    return result


def sequential_ids() -> Callable[[], str]:
    counter = itertools.count(1)
    return lambda: f"job-{next(counter):06d}"


class JobStore:
    """In-memory job table with at most one live job per capability name."""

    def __init__(self, id_factory: Optional[Callable[[], str]] = None) -> None:
        self.lock = threading.RLock()
        self.jobs: Dict[str, EvolutionJob] = {}
        self.active_index: Dict[str, str] = {}
        self._new_id = id_factory or (lambda: uuid.uuid4().hex)

    def find_active_for_capability(self, name: str) -> Optional[str]:
        with self.lock:
            job_id = self.active_index.get(name)
            if job_id is not None and self.jobs[job_id].terminal:
                return None
            return job_id

    def get(self, job_id: str) -> EvolutionJob:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    def submit_upgrade(
        self,
        state: AgentState,
        name: str,
        version: "SemVer | str",
        soak_ticks: int = DEFAULT_SOAK_TICKS,
        threshold: int = DEFAULT_THRESHOLD,
        tick_interval: float = DEFAULT_TICK_INTERVAL,
    ) -> EvolutionJob:
        """Admit a new pending job, or raise.

        Raises :class:`UnknownNameError` if ``name`` is not registered and
        :class:`UpgradeConflict` (carrying the live job id) if the capability
        already has a non-terminal job. Check and insert share one critical
        section.
        """
        version = SemVer.parse(version)
        if soak_ticks < 1:
            raise ValueError("soak_ticks must be positive")
        if threshold < 0:
            raise ValueError("metrics_threshold must be non-negative")
        with self.lock:
            if name not in state.names:
                raise UnknownNameError(name)
            existing = self.find_active_for_capability(name)
            if existing is not None:
                raise UpgradeConflict(name, existing)
            job = EvolutionJob(
                job_id=self._new_id(),
                capability=name,
                target_version=version,
                prior_version=state.active[name],
                soak_ticks=soak_ticks,
                tick_interval=tick_interval,
                metrics_threshold=threshold,
            )
            job.transition_log.append(LogRow(S.PENDING, state.identity().hex, time.monotonic_ns()))
            self.jobs[job.job_id] = job
            self.active_index[name] = job.job_id
            return job

    def _retire(self, job: EvolutionJob) -> None:
        if self.active_index.get(job.capability) == job.job_id:
            del self.active_index[job.capability]

    def recover_after_restart(self, state: AgentState) -> List[str]:
        """Clear provisional entries orphaned by a restart.

        Jobs are not durable, so any provisional version found at startup
        belongs to a canary that can never finish.
        """
        cleared = []
        with self.lock:
            for name in list(state.provisional):
                version = state.provisional.pop(name)
                state.append_audit(
                    AuditKind.SYNTHETIC_RESTART_ROLLBACK, f"{name} {version} orphaned by restart"
                )
                cleared.append(name)
        return cleared


Observer = Callable[[EvolutionJob, JobStatus, JobStatus, AgentState], None]


class Pipeline:
    """Drives jobs against one agent state.

    ``rollback_guard=False`` builds the regression control: a fault marks
    the job ``failed`` and leaves the provisional entry in place.
    """

    def __init__(
        self,
        state: AgentState,
        store: Optional[JobStore] = None,
        *,
        rollback_guard: bool = True,
        refuse_manifest_writes: bool = True,
        observer: Optional[Observer] = None,
    ) -> None:
        self.state = state
        self.store = store or JobStore()
        self.rollback_guard = rollback_guard
        self.observers: List[Observer] = [observer] if observer else []
        if state.guard is None:
            state.guard = ManifestGuard(refuse=refuse_manifest_writes)
        self.guard = state.guard

    @property
    def lock(self) -> threading.RLock:
        return self.store.lock

    # -- transitions -------------------------------------------------------

    def _set_status(self, job: EvolutionJob, dst: JobStatus) -> None:
        src = job.status
        if not is_legal(src, dst):
            raise InvariantFault(f"illegal transition {src.value} -> {dst.value}")
        self.guard.record("job_metadata")
        job.status = dst
        job.transition_log.append(LogRow(dst, self.state.identity().hex, time.monotonic_ns()))
        if dst in TERMINAL:
            self.store._retire(job)

    def _transition(
        self,
        job: EvolutionJob,
        dst: JobStatus,
        writes: Optional[Callable[[], None]] = None,
        audit: Optional[str] = None,
        audit_kind: AuditKind = AuditKind.TRANSITION,
    ) -> None:
        with self.lock:
            if job.terminal:
                raise _Halted()
            src = job.status
            self.guard.begin(transition_label(src, dst))
            try:
                if writes is not None:
                    writes()
                self._set_status(job, dst)
                if audit is not None:
                    self.state.append_audit(audit_kind, f"{job.job_id} {job.capability} {audit}")
            finally:
                self.guard.end()
            for obs in self.observers:
                obs(job, src, dst, self.state)

    def enter_canary(self, job: EvolutionJob) -> None:
        """``shadow_passed -> canary_running``: set the provisional version."""
        name = job.capability

        def write() -> None:
            if job.status != S.SHADOW_PASSED:
                raise InvariantFault(f"canary entry from {job.status.value}")
            if name in self.state.provisional:
                raise InvariantFault(f"provisional version already set for {name}")
            self.state.provisional[name] = job.target_version

        self._transition(job, S.CANARY_RUNNING, write, audit=f"enter canary {job.target_version}")

    def atomic_promote(self, job: EvolutionJob) -> None:
        """``canary_promoted -> promoted``: move the provisional version into the active map."""
        name = job.capability

        def write() -> None:
            if job.status != S.CANARY_PROMOTED:
                raise InvariantFault(f"promote from {job.status.value}")
            if name not in self.state.provisional:
                raise InvariantFault(f"no provisional version for {name}")
            self.state.active[name] = self.state.provisional[name]
            del self.state.provisional[name]
            job.promote_applied = True

        self._transition(job, S.PROMOTED, write, audit=f"promote {job.target_version}")

    def rollback(self, job: EvolutionJob, reason: str) -> bool:
        """Clear the job's provisional entry and mark it ``rolled_back``.

        Returns False if the job was already terminal. Never raises for a
        live job.
        """
        name = job.capability

        def write() -> None:
            if name in self.state.provisional:
                del self.state.provisional[name]
            if job.promote_applied:
                self.state.active[name] = job.prior_version

        with self.lock:
            if job.terminal:
                return False
            if job.failure_reason is None:
                job.failure_reason = reason
            self._transition(
                job, S.ROLLED_BACK, write, audit=f"rolled back: {reason}", audit_kind=AuditKind.ROLLBACK_REASON
            )
        return True

    def _fail(self, job: EvolutionJob, reason: str, clear_provisional: bool) -> None:
        name = job.capability

        def write() -> None:
            if clear_provisional and name in self.state.provisional:
                del self.state.provisional[name]

        with self.lock:
            if job.terminal:
                return
            job.failure_reason = reason
            self._transition(job, S.FAILED, write, audit=f"failed: {reason}")

    def _reject(self, job: EvolutionJob, reason: str) -> None:
        job.failure_reason = reason
        self._transition(job, S.REJECTED, audit=f"rejected: {reason}")

    # -- driver ------------------------------------------------------------

    async def run_job(self, job: EvolutionJob, hooks: Optional[PipelineHooks] = None) -> JobStatus:
        """Drive ``job`` to a terminal status.

        A hook fault rolls the job back and is then re-raised. Invariant
        faults (a refused manifest write, a provisional slot already taken)
        end in ``failed`` with the provisional entry cleared, and are also
        re-raised. Callers that only want the outcome should use :meth:`drive`.
        """
        hooks = hooks or PipelineHooks()
        if job.status != S.PENDING:
            raise InvariantFault(f"run_job needs a pending job, got {job.status.value}")
        try:
            await self._body(job, hooks)
        except _Halted:
            pass
        except (InvariantFault, ManifestFrozenError) as exc:
            self._fail(job, f"{type(exc).__name__}: {exc}", clear_provisional=True)
            raise
        except Exception as exc:
            reason = f"{type(exc).__name__}: {exc}"
            if self.rollback_guard:
                self.rollback(job, reason)
                await self._safe_hook(hooks.on_rollback, job)
            else:
                with self.lock:
                    if not job.terminal:
                        job.failure_reason = reason
                        self._transition(job, S.FAILED, audit=f"failed: {reason}")
            raise
        return job.status

    async def drive(self, job: EvolutionJob, hooks: Optional[PipelineHooks] = None) -> JobStatus:
        """Scheduler wrapper: run the job and absorb the re-raised fault."""
        try:
            await self.run_job(job, hooks)
        except Exception:
            log.warning("job %s ended on fault: %s", job.job_id, job.failure_reason)
        return job.status

    async def _body(self, job: EvolutionJob, hooks: PipelineHooks) -> None:
        name, version = job.capability, job.target_version
        self._transition(job, S.VALIDATING)
        if not await _call(hooks.validator, name, version, hook="validator"):
            self._reject(job, "validator rejected")
            return
        self._transition(job, S.SHADOW_RUNNING)
        if not await _call(hooks.shadow_replay, name, version, hook="shadow_replay"):
            self._reject(job, "shadow replay failed")
            return
        self._transition(job, S.SHADOW_PASSED, audit="shadow replay clean")
        self.enter_canary(job)

        window_start = datetime.now(timezone.utc)
        for tick in range(1, job.soak_ticks + 1):
            await asyncio.sleep(job.tick_interval)
            if job.terminal:
                raise _Halted()
            metrics = await _call(hooks.metrics_provider, window_start, hook="metrics_provider")
            job.ticks_observed = tick
            decision = evaluate_tick(metrics, job.metrics_threshold, tick, job.soak_ticks)
            if decision is Decision.ROLLBACK_NOW:
                reason = (
                    f"violations {metrics.violation_count} > threshold {job.metrics_threshold} "
                    f"at tick {tick}/{job.soak_ticks}"
                )
                if self.rollback(job, reason):
                    await self._safe_hook(hooks.on_rollback, job)
                return
            if decision is Decision.PROMOTE_READY:
                break

        self._transition(job, S.CANARY_PROMOTED, audit="metrics threshold met")
        self.atomic_promote(job)
        await self._safe_hook(hooks.on_promote, job)

    async def _safe_hook(self, fn: Callable, job: EvolutionJob) -> None:
        try:
            await _call(fn, job, hook=getattr(fn, "__name__", "callback"))
        except Exception:
            log.exception("post-transition hook failed for job %s", job.job_id)

    def abort_job(self, job_id: str) -> JobStatus:
        job = self.store.get(job_id)
        self.rollback(job, "aborted by operator")
        return job.status


def status_path_is_legal(statuses: Iterable[JobStatus]) -> bool:
    seq = list(statuses)
    if not seq or seq[0] != S.PENDING:
        return False
    return all(is_legal(a, b) for a, b in zip(seq, seq[1:]))


def write_trace_csv(rows: Iterable[Tuple[int, int, str, str, int]], dest) -> None:
    """``cycle,transition_index,status_after,identity_hash_hex8,timestamp_ns``."""
    writer = csv.writer(dest)
    writer.writerow(["cycle", "transition_index", "status_after", "identity_hash_hex8", "timestamp_ns"])
    for row in rows:
        writer.writerow(row)


def trace_rows(cycle: int, job: EvolutionJob) -> List[Tuple[int, int, str, str, int]]:
    return [
        (cycle, idx, r.status.value, r.identity_hex[:8], r.timestamp_ns)
        for idx, r in enumerate(job.transition_log)
    ]

