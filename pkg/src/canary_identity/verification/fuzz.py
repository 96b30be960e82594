"""Seeded workload fuzzer for the real pipeline.

Each seed builds a random agent (1-4 capability names, random starting
versions) and runs 1-4 waves of upgrades through :class:`Pipeline`. Jobs in
a wave target distinct names and run concurrently on one event loop.
Validator and shadow outcomes are fair coin flips; a quarter of jobs get an
injected exception in one hook, at a uniformly chosen soak tick when the hook
is the metrics provider. Smaller slices exercise operator aborts, threshold
rollbacks and a rogue hook that tries to edit the persona digest.

Every transition is recorded together with the identity hash and both
version maps, and the four invariants are checked over that trace.
"""

from __future__ import annotations

import asyncio
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Dict, List, Optional, Tuple

from ..identity import AgentState, SemVer, sha256
from ..metrics import CanaryMetrics
from ..pipeline import (
    EvolutionJob,
    JobStatus,
    JobStore,
    Pipeline,
    PipelineHooks,
    is_legal,
    sequential_ids,
)

S = JobStatus
NAME_POOL = ("grasp", "place", "pour", "wipe", "stack", "push", "open_door")
BRANCHES = (
    "success",
    "validator_reject",
    "shadow_reject",
    "threshold_rollback",
    "fault_validator",
    "fault_shadow",
    "fault_metrics",
    "abort",
    "manifest_write_refused",
)
FAULT_PROBABILITY = 0.25


class InjectedFault(RuntimeError):
    pass


@dataclass
class JobPlan:
    name: str
    version: SemVer
    soak_ticks: int
    validator_ok: bool
    shadow_ok: bool
    fault_site: Optional[str] = None
    fault_tick: int = 0
    violation_tick: int = 0
    abort_tick: int = 0
    rogue_hook: bool = False
    threshold: int = 0


@dataclass
class Workload:
    names: List[str]
    initial: Dict[str, SemVer]
    waves: List[List[JobPlan]]


def generate_workload(seed: int) -> Workload:
    rng = random.Random(seed)
    names = sorted(rng.sample(NAME_POOL, rng.randint(1, 4)))
    initial = {n: SemVer(rng.randint(0, 2), rng.randint(0, 5), rng.randint(0, 9)) for n in names}
    current = dict(initial)
    waves = []
    for _ in range(rng.randint(1, 4)):
        wave = []
        for name in rng.sample(names, rng.randint(1, len(names))):
            v = current[name]
            bump = rng.choice(("patch", "minor", "major"))
            if bump == "patch":
                target = SemVer(v.major, v.minor, v.patch + 1)
            elif bump == "minor":
                target = SemVer(v.major, v.minor + 1, 0)
            else:
                target = SemVer(v.major + 1, 0, 0)
            soak = rng.randint(1, 5)
            plan = JobPlan(
                name=name,
                version=target,
                soak_ticks=soak,
                validator_ok=rng.random() < 0.5,
                shadow_ok=rng.random() < 0.5,
                threshold=rng.randint(0, 2),
            )
            if rng.random() < FAULT_PROBABILITY:
                plan.fault_site = rng.choice(("validator", "shadow", "metrics"))
                plan.fault_tick = rng.randint(1, soak)
            else:
                roll = rng.random()
                if roll < 0.25:
                    plan.violation_tick = rng.randint(1, soak)
                elif roll < 0.35:
                    plan.abort_tick = rng.randint(1, soak)
                elif roll < 0.42:
                    plan.rogue_hook = True
            wave.append(plan)
            # only a fully clean plan can promote; track what we'd bump from
            current[name] = target
        waves.append(wave)
    return Workload(names, initial, waves)


@dataclass
class TraceRow:
    job_id: str
    src: str
    dst: str
    identity_hex: str
    active: Tuple[Tuple[str, str], ...]
    provisional: Tuple[Tuple[str, str], ...]

    def line(self) -> str:
        act = ";".join(f"{k}={v}" for k, v in self.active)
        prov = ";".join(f"{k}={v}" for k, v in self.provisional)
        return f"{self.job_id},{self.src},{self.dst},{self.identity_hex[:16]},{act},{prov}"


@dataclass
class SeedResult:
    seed: int
    trace: List[TraceRow]
    violations: List[Tuple[str, str]]
    statuses: Counter
    branches: Counter
    reached_canary: bool

    def trace_text(self) -> str:
        return "\n".join(r.line() for r in self.trace)


def _hooks_for(plan: JobPlan, pipeline: Pipeline, job: EvolutionJob) -> PipelineHooks:
    state = pipeline.state
    tick = {"n": 0}

    def validator(name, version):
        if plan.fault_site == "validator":
            raise InjectedFault("validator")
        return plan.validator_ok

    def shadow(name, version):
        if plan.fault_site == "shadow":
            raise InjectedFault("shadow replay")
        if plan.rogue_hook:
            state.manifest = replace(state.manifest, h_persona=sha256("rogue persona"))
        return plan.shadow_ok

    def metrics(window_start: datetime) -> CanaryMetrics:
        tick["n"] += 1
        n = tick["n"]
        if plan.fault_site == "metrics" and n == plan.fault_tick:
            return 1 / 0  # type: ignore[return-value]
        if plan.abort_tick and n == plan.abort_tick:
            pipeline.abort_job(job.job_id)
        violations = plan.threshold + 1 if plan.violation_tick and n >= plan.violation_tick else 0
        return CanaryMetrics(window_start, traffic_count=n * 3 + violations, violation_count=violations)

    return PipelineHooks(validator=validator, shadow_replay=shadow, metrics_provider=metrics)


def _classify(plan: JobPlan, job: EvolutionJob) -> str:
    st = job.status
    if st is S.PROMOTED:
        return "success"
    if st is S.REJECTED:
        return "validator_reject" if (job.failure_reason or "").startswith("validator") else "shadow_reject"
    if st is S.FAILED:
        return "manifest_write_refused"
    reason = job.failure_reason or ""
    if reason.startswith("aborted"):
        return "abort"
    if reason.startswith("violations"):
        return "threshold_rollback"
    if "ZeroDivisionError" in reason:
        return "fault_metrics"
    if "shadow" in reason:
        return "fault_shadow"
    return "fault_validator"


def check_trace(
    baseline_hex: str, trace: List[TraceRow], jobs: Dict[str, EvolutionJob], hash_mode: str
) -> List[Tuple[str, str]]:
    violations: List[Tuple[str, str]] = []
    for row in trace:
        if row.identity_hex != baseline_hex:
            violations.append(("IdentityInvariant", f"{row.job_id} {row.src}->{row.dst}"))
            break
    for job in jobs.values():
        statuses = [r.status for r in job.transition_log]
        if not statuses or statuses[0] is not S.PENDING or not all(is_legal(a, b) for a, b in zip(statuses, statuses[1:])):
            violations.append(("StateInvariant", f"{job.job_id} {[s.value for s in statuses]}"))
        if not job.terminal:
            violations.append(("StateInvariant", f"{job.job_id} not terminal"))
    prev_active: Optional[Dict[str, str]] = None
    for row in trace:
        active = dict(row.active)
        job = jobs[row.job_id]
        if prev_active is not None and active != prev_active:
            changed = {k for k in set(active) | set(prev_active) if active.get(k) != prev_active.get(k)}
            if row.dst != S.PROMOTED.value or changed != {job.capability}:
                violations.append(("VInvariant", f"{row.job_id} {row.src}->{row.dst} changed {sorted(changed)}"))
        prev_active = active
        prov = dict(row.provisional)
        in_canary = row.dst in (S.CANARY_RUNNING.value, S.CANARY_PROMOTED.value)
        if in_canary and prov.get(job.capability) != str(job.target_version):
            violations.append(("VpInvariant", f"{row.job_id} {row.dst} missing provisional"))
        if not in_canary and job.capability in prov:
            violations.append(("VpInvariant", f"{row.job_id} {row.dst} provisional left set"))
    if trace and trace[-1].provisional:
        violations.append(("VpInvariant", "provisional map not empty at end of run"))
    return violations


async def _run_seed(seed: int, hash_mode: str) -> SeedResult:
    wl = generate_workload(seed)
    state = AgentState.create(wl.names, wl.initial, strawman_flag=(hash_mode == "strawman"))
    store = JobStore(id_factory=sequential_ids())
    trace: List[TraceRow] = []

    def observe(job, src, dst, st):
        trace.append(
            TraceRow(
                job.job_id,
                src.value,
                dst.value,
                st.identity().hex,
                tuple(st.active.snapshot().items()),
                tuple(st.provisional.snapshot().items()),
            )
        )

    pipeline = Pipeline(state, store, observer=observe)
    baseline = state.identity().hex
    jobs: Dict[str, EvolutionJob] = {}
    branches: Counter = Counter()
    plans: Dict[str, JobPlan] = {}
    for wave in wl.waves:
        runs = []
        for plan in wave:
            job = store.submit_upgrade(state, plan.name, plan.version, plan.soak_ticks, plan.threshold, 0.0)
            jobs[job.job_id] = job
            plans[job.job_id] = plan
            runs.append(pipeline.drive(job, _hooks_for(plan, pipeline, job)))
        await asyncio.gather(*runs)
    for job_id, job in jobs.items():
        branches[_classify(plans[job_id], job)] += 1
    statuses: Counter = Counter(r.status.value for j in jobs.values() for r in j.transition_log)
    reached = any(r.dst == S.CANARY_RUNNING.value for r in trace)
    violations = check_trace(baseline, trace, jobs, hash_mode)
    return SeedResult(seed, trace, violations, statuses, branches, reached)


def run_seed(seed: int, hash_mode: str = "ican") -> SeedResult:
    return asyncio.run(_run_seed(seed, hash_mode))


@dataclass
class FuzzReport:
    hash_mode: str
    seeds_run: int = 0
    violations: List[Tuple[int, str, str]] = field(default_factory=list)
    violating_seeds: set = field(default_factory=set)
    seeds_reaching_canary: set = field(default_factory=set)
    status_coverage: Counter = field(default_factory=Counter)
    branch_coverage: Counter = field(default_factory=Counter)
    transitions: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def uncovered(self) -> Tuple[List[str], List[str]]:
        statuses = [s.value for s in JobStatus if not self.status_coverage[s.value]]
        branches = [b for b in BRANCHES if not self.branch_coverage[b]]
        return statuses, branches

    def text(self) -> str:
        lines = [
            f"fuzz: mode={self.hash_mode} seeds={self.seeds_run} transitions={self.transitions}",
            f"violations: {len(self.violations)} across {len(self.violating_seeds)} seeds",
            f"seeds reaching canary entry: {len(self.seeds_reaching_canary)}",
            "status coverage: " + ", ".join(f"{s.value}={self.status_coverage[s.value]}" for s in JobStatus),
            "branch coverage: " + ", ".join(f"{b}={self.branch_coverage[b]}" for b in BRANCHES),
        ]
        return "\n".join(lines)


def fuzz(seed_count: int, hash_mode: str = "ican", start_seed: int = 0) -> FuzzReport:
    if seed_count < 1:
        raise ValueError("seed_count must be at least 1")
    if hash_mode not in ("ican", "strawman"):
        raise ValueError("hash_mode must be 'ican' or 'strawman'")

    async def run_all() -> FuzzReport:
        report = FuzzReport(hash_mode)
        for seed in range(start_seed, start_seed + seed_count):
            res = await _run_seed(seed, hash_mode)
            report.seeds_run += 1
            report.transitions += len(res.trace)
            report.status_coverage.update(res.statuses)
            report.branch_coverage.update(res.branches)
            if res.reached_canary:
                report.seeds_reaching_canary.add(seed)
            for inv, detail in res.violations:
                report.violations.append((seed, inv, detail))
                report.violating_seeds.add(seed)
        return report

    return asyncio.run(run_all())

