"""Canary drift metrics over the execution store."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, List, Optional


class RecordKind(str, enum.Enum):
    UNSAFE_ACTION_ATTEMPT = "unsafe_action_attempt"
    RECOVERY_ESCALATION = "recovery_escalation"
    CONTRACT_VIOLATION = "contract_violation"
    NORMAL = "normal"


@dataclass(frozen=True)
class ExecutionRecord:
    timestamp: datetime
    kind: RecordKind = RecordKind.NORMAL
    pending_review: bool = False

    @property
    def is_violation(self) -> bool:
        return self.kind != RecordKind.NORMAL


class ExecutionStore:
    """Append-only record list; readers get a snapshot."""

    def __init__(self, records: Optional[List[ExecutionRecord]] = None) -> None:
        self._records: List[ExecutionRecord] = list(records or [])
        self._lock = threading.Lock()

    def append(self, record: ExecutionRecord) -> None:
        with self._lock:
            self._records.append(record)

    def snapshot(self) -> List[ExecutionRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)


@dataclass(frozen=True)
class CanaryMetrics:
    window_start: datetime
    traffic_count: int = 0
    violation_count: int = 0
    excluded_pending: int = 0


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    PROMOTE_READY = "promote_ready"
    ROLLBACK_NOW = "rollback_now"


def to_utc(ts: datetime, naive_offset: timedelta = timedelta(0)) -> datetime:
    """Interpret a naive timestamp as local time at ``naive_offset`` from UTC."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone(naive_offset)).astimezone(timezone.utc)
    return ts.astimezone(timezone.utc)


def collect_metrics(
    store: ExecutionStore,
    window_start: datetime,
    naive_offset: timedelta = timedelta(0),
) -> CanaryMetrics:
    """Summarise drift indicators recorded at or after ``window_start``.

    Naive (legacy) timestamps are normalised on read; the store itself is
    never rewritten. Records awaiting human review are counted as traffic
    but kept out of ``violation_count``.
    """
    start = to_utc(window_start, naive_offset)
    traffic = violations = pending = 0
    for rec in store.snapshot():
        if to_utc(rec.timestamp, naive_offset) < start:
            continue
        traffic += 1
        if rec.pending_review:
            pending += 1
            continue
        if rec.is_violation:
            violations += 1
    return CanaryMetrics(start, traffic, violations, pending)


def evaluate_tick(
    metrics: CanaryMetrics, threshold: int, tick: int = 1, soak_ticks: int = 1
) -> Decision:
    """Decide after ``tick`` of ``soak_ticks``.

    A violation count above the threshold rolls back immediately, even
    mid-window. At the last tick, a quiet window (no traffic) promotes.
    """
    if metrics.violation_count > threshold:
        return Decision.ROLLBACK_NOW
    if tick >= soak_ticks:
        return Decision.PROMOTE_READY
    return Decision.CONTINUE


def store_provider(
    store: ExecutionStore, naive_offset: timedelta = timedelta(0)
) -> Callable[[datetime], CanaryMetrics]:
    def provider(window_start: datetime) -> CanaryMetrics:
        return collect_metrics(store, window_start, naive_offset)

    return provider


class FaultInjectingProvider:
    """Wrap a provider so that its ``fault_tick``-th call divides by zero."""

    def __init__(self, inner: Callable[[datetime], CanaryMetrics], fault_tick: int) -> None:
        if fault_tick < 1:
            raise ValueError("fault_tick counts from 1")
        self.inner = inner
        self.fault_tick = fault_tick
        self.calls = 0

    def __call__(self, window_start: datetime) -> CanaryMetrics:
        self.calls += 1
        if self.calls == self.fault_tick:
            return 1 / 0  # type: ignore[return-value]
        return self.inner(window_start)
