"""Desk-scale reproductions of the identity, crash, and latency experiments.

Every experiment drives a fresh :class:`~canary_identity.engine.Engine` through
its public API. The default soak is 5 ticks x 20 ms.
"""

from __future__ import annotations

import asyncio
import csv
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

from ..identity import AgentState
from ..metrics import FaultInjectingProvider, store_provider
from ..pipeline import DEFAULT_SOAK_TICKS, DEFAULT_TICK_INTERVAL, JobStatus, PipelineHooks, trace_rows, write_trace_csv
from ..engine import Engine
from .stats import BcaInterval, bca_interval, tail_percentiles

log = logging.getLogger(__name__)

CHECKPOINTS = ("pre_canary", "canary_running", "promoted", "post_terminal")
MODES = ("ican", "strawman")


@dataclass
class CycleTrace:
    cycle: int
    checkpoints: Dict[str, str]
    final_status: str

    @property
    def distinct_hashes(self) -> int:
        return len(set(self.checkpoints.values()))

    @property
    def drifted(self) -> bool:
        return self.distinct_hashes > 1


@dataclass
class CyclesResult:
    mode: str
    traces: List[CycleTrace]
    transition_rows: List[Tuple[int, int, str, str, int]] = field(default_factory=list)

    @property
    def rows(self) -> List[Tuple[int, str, str]]:
        return [(t.cycle, cp, t.checkpoints[cp]) for t in self.traces for cp in CHECKPOINTS if cp in t.checkpoints]

    @property
    def unique_hashes(self) -> int:
        return len({h for _, _, h in self.rows})

    @property
    def drift_events(self) -> int:
        return sum(t.drifted for t in self.traces)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "checkpoint", "identity_hash_hex8"])
            w.writerows(self.rows)

    def write_transitions_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            write_trace_csv(self.transition_rows, fh)

    def summary(self) -> str:
        per_cycle = sorted({t.distinct_hashes for t in self.traces})
        return (
            f"cycles: mode={self.mode} n={len(self.traces)} rows={len(self.rows)} "
            f"unique_hashes={self.unique_hashes} drift_events={self.drift_events} "
            f"distinct_per_cycle={per_cycle}"
        )


def _new_engine(
    mode: str, soak_ticks: int, tick_interval: float, rollback_guard: bool = True
) -> Engine:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    state = AgentState.create(["grasp", "place"], "v1.0.0", strawman_flag=(mode == "strawman"))
    return Engine(state, soak_ticks=soak_ticks, tick_interval=tick_interval, rollback_guard=rollback_guard)


def run_cycles(
    n: int,
    mode: str = "ican",
    *,
    soak_ticks: int = DEFAULT_SOAK_TICKS,
    tick_interval: float = DEFAULT_TICK_INTERVAL,
) -> CyclesResult:
    """Run ``n`` successful canary cycles upgrading ``grasp`` one patch at a time."""
    if n < 1:
        raise ValueError("n must be at least 1")

    async def go() -> CyclesResult:
        engine = _new_engine(mode, soak_ticks, tick_interval)
        current: Dict[str, str] = {}

        def observe(job, src, dst, state):
            if dst in (JobStatus.CANARY_RUNNING, JobStatus.PROMOTED):
                current[dst.value] = state.identity().prefix

        engine.pipeline.observers.append(observe)
        result = CyclesResult(mode, [])
        for cycle in range(1, n + 1):
            current.clear()
            current["pre_canary"] = engine.identity().prefix
            target = engine.state.active["grasp"].bump_patch()
            job = await engine.submit("grasp", target)
            status = await engine.wait(job.job_id)
            current["post_terminal"] = engine.identity().prefix
            result.traces.append(
                CycleTrace(cycle, {cp: current[cp] for cp in CHECKPOINTS if cp in current}, status.value)
            )
            result.transition_rows.extend(trace_rows(cycle, job))
        return result

    return asyncio.run(go())


@dataclass
class CrashReport:
    runs: int
    rolled_back_count: int = 0
    vp_clear_count: int = 0
    identity_stable_count: int = 0
    v_unchanged_count: int = 0
    fault_ticks: List[int] = field(default_factory=list)

    def summary(self) -> str:
        return (
            f"crash: runs={self.runs} rolled_back={self.rolled_back_count}/{self.runs} "
            f"vp_cleared={self.vp_clear_count}/{self.runs} "
            f"identity_stable={self.identity_stable_count}/{self.runs} "
            f"v_unchanged={self.v_unchanged_count}/{self.runs}"
        )


def run_crash_injection(
    runs: int,
    ticks: Iterable[int] = (1, 2, 3, 4),
    *,
    rollback_guard: bool = True,
    seed: int = 0,
    soak_ticks: int = DEFAULT_SOAK_TICKS,
    tick_interval: float = DEFAULT_TICK_INTERVAL,
) -> CrashReport:
    """Inject a metrics-provider fault at a uniformly drawn tick in each run."""
    ticks = sorted(set(ticks))
    if not ticks or min(ticks) < 1 or max(ticks) > soak_ticks - 1:
        raise ValueError(f"ticks must lie in 1..{soak_ticks - 1}")
    rng = random.Random(seed)

    async def one(fault_tick: int, report: CrashReport) -> None:
        engine = _new_engine("ican", soak_ticks, tick_interval, rollback_guard)
        engine.hooks_factory = lambda job: PipelineHooks(
            metrics_provider=FaultInjectingProvider(store_provider(engine.execution_store), fault_tick)
        )
        baseline = engine.identity()
        before = engine.state.active.snapshot()
        job = await engine.submit("grasp", "v1.1.0")
        status = await engine.wait(job.job_id)
        report.rolled_back_count += status is JobStatus.ROLLED_BACK
        report.vp_clear_count += len(engine.state.provisional) == 0
        report.identity_stable_count += engine.identity() == baseline
        report.v_unchanged_count += engine.state.active.snapshot() == before

    async def go() -> CrashReport:
        report = CrashReport(runs)
        for _ in range(runs):
            t = rng.choice(ticks)
            report.fault_ticks.append(t)
            await one(t, report)
        return report

    logging.getLogger("canary_identity.pipeline").disabled = True
    try:
        return asyncio.run(go())
    finally:
        logging.getLogger("canary_identity.pipeline").disabled = False


@dataclass
class StageSummary:
    stage: str
    samples: List[float]
    interval: BcaInterval
    percentiles: Dict[str, float]

    def row(self) -> str:
        ci = self.interval
        p = self.percentiles
        return (
            f"{self.stage:<15} mean={ci.mean:10.3f} CI95=[{ci.lower:.3f}, {ci.upper:.3f}] "
            f"p50={p['p50']:.3f} p95={p['p95']:.3f} p99={p['p99']:.3f} (ms, n={len(self.samples)})"
        )


@dataclass
class LatencyReport:
    stages: Dict[str, StageSummary]
    soak_ms: float

    def summary(self) -> str:
        return "\n".join(s.row() for s in self.stages.values())

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "cycle", "value_ms"])
            for s in self.stages.values():
                for i, v in enumerate(s.samples, 1):
                    w.writerow([s.stage, i, f"{v:.6f}"])


def measure_latency(
    n: int,
    *,
    resamples: int = 10_000,
    seed: int = 0,
    alpha: float = 0.05,
    soak_ticks: int = DEFAULT_SOAK_TICKS,
    tick_interval: float = DEFAULT_TICK_INTERVAL,
) -> LatencyReport:
    """Time submit->shadow_passed and submit->promoted per cycle on a monotonic clock."""
    if n < 10:
        raise ValueError("n must be at least 10")

    async def go() -> Dict[str, List[float]]:
        engine = _new_engine("ican", soak_ticks, tick_interval)
        marks: Dict[str, int] = {}

        def observe(job, src, dst, state):
            if dst in (JobStatus.SHADOW_PASSED, JobStatus.PROMOTED):
                marks[dst.value] = time.perf_counter_ns()

        engine.pipeline.observers.append(observe)
        out: Dict[str, List[float]] = {"val_plus_shadow": [], "full_plus_soak": []}
        for _ in range(n):
            marks.clear()
            target = engine.state.active["grasp"].bump_patch()
            t0 = time.perf_counter_ns()
            job = await engine.submit("grasp", target)
            await engine.wait(job.job_id)
            out["val_plus_shadow"].append((marks["shadow_passed"] - t0) / 1e6)
            out["full_plus_soak"].append((marks["promoted"] - t0) / 1e6)
        return out

    samples = asyncio.run(go())
    stages = {
        stage: StageSummary(stage, vals, bca_interval(vals, resamples, alpha, seed), tail_percentiles(vals))
        for stage, vals in samples.items()
    }
    return LatencyReport(stages, soak_ticks * tick_interval * 1e3)
