"""End-to-end acceptance checks, one test per criterion.

Each test prints (and records for the terminal summary) a single
``[NN] PASS|FAIL name: detail`` line before asserting.
"""

import random
import threading
import time
from dataclasses import replace

import test_pipeline as tp
from canary_identity.audit import AuditKind, verify_chain
from canary_identity.bench.harness import measure_latency, run_crash_injection, run_cycles
from canary_identity.bench.stats import bca_interval
from canary_identity.identity import AgentState, SemVer
from canary_identity.metrics import CanaryMetrics
from canary_identity.pipeline import SUCCESS_PATH, JobStatus, JobStore, PipelineHooks, UpgradeConflict
from canary_identity.verification.fuzz import fuzz
from canary_identity.verification.model import enumerate_reachable
from canary_identity.verification.writesets import DECLARED_WRITE_SETS, check_write_sets, matches_exactly
from test_stats import percentile_oracle

from conftest import ACCEPTANCE_LINES, make_pipeline, run

S = JobStatus


def verdict(num, name, ok, detail):
    line = f"[{num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_identity_invariance_at_scale():
    t0 = time.perf_counter()
    res = run_cycles(100, "ican")
    elapsed = time.perf_counter() - t0
    ok = len(res.rows) == 400 and res.unique_hashes == 1 and res.drift_events == 0 and elapsed < 30
    verdict(
        1,
        "identity invariance",
        ok,
        f"rows={len(res.rows)} unique_hashes={res.unique_hashes} drift={res.drift_events} in {elapsed:.1f}s",
    )


def test_02_strawman_falsification():
    res = run_cycles(100, "strawman")
    per_cycle = [t.distinct_hashes for t in res.traces]
    ok = len(per_cycle) == 100 and all(n == 3 for n in per_cycle)
    verdict(2, "strawman three hashes per cycle", ok, f"distinct_per_cycle={sorted(set(per_cycle))} over {len(per_cycle)} cycles")


def test_03_worked_example():
    state, store, pipeline = make_pipeline()
    rows = []
    pipeline.observers.append(tp.snapshot_observer(rows))
    baseline = state.identity().hex
    job = store.submit_upgrade(state, "grasp", "v1.1.0", soak_ticks=5, tick_interval=0)
    run(pipeline.run_job(job))
    statuses = [r.status for r in job.transition_log]
    canary = {S.CANARY_RUNNING, S.CANARY_PROMOTED}
    ok = (
        statuses == list(SUCCESS_PATH)
        and all(r.identity_hex == baseline for r in job.transition_log)
        and all(prov == ({"grasp": "v1.1.0"} if dst in canary else {}) for dst, _, prov, _ in rows)
        and all(act == {"grasp": "v1.0.0", "place": "v1.0.0"} for dst, act, _, _ in rows if dst is not S.PROMOTED)
        and rows[-1][1] == {"grasp": "v1.1.0", "place": "v1.0.0"}
    )
    verdict(3, "worked example", ok, f"{len(statuses)} rows, hash {baseline[:8]} on every row, final V={rows[-1][1]}")


def test_04_crash_recovery():
    rep = run_crash_injection(50, (1, 2, 3, 4))
    ctl = run_crash_injection(50, (1, 2, 3, 4), rollback_guard=False)
    ok = (
        rep.rolled_back_count == rep.vp_clear_count == rep.identity_stable_count == 50
        and ctl.vp_clear_count == 0
    )
    verdict(4, "crash recovery", ok, f"{rep.summary()}; control vp_cleared={ctl.vp_clear_count}/50")


def test_05_reachability():
    ican = enumerate_reachable(2, 3, "ican")
    straw = enumerate_reachable(2, 3, "strawman")
    ok = ican.ok and bool(straw.violated("IdentityInvariant"))
    verdict(
        5,
        "reachability",
        ok,
        f"ican states={ican.states_explored} depth={ican.max_depth} violations=0; "
        f"strawman identity counterexamples={len(straw.violated('IdentityInvariant'))}",
    )


def test_06_fuzzer():
    t0 = time.perf_counter()
    rep = fuzz(10_000, "ican")
    elapsed = time.perf_counter() - t0
    again = fuzz(25, "ican", start_seed=4321)
    same = fuzz(25, "ican", start_seed=4321)
    deterministic = again.status_coverage == same.status_coverage and again.branch_coverage == same.branch_coverage
    statuses, branches = rep.uncovered()
    ok = rep.ok and not statuses and not branches and deterministic and elapsed < 60
    verdict(
        6,
        "fuzzer",
        ok,
        f"seeds={rep.seeds_run} violations={len(rep.violations)} uncovered={statuses + branches} "
        f"deterministic={deterministic} in {elapsed:.1f}s",
    )


def test_07_write_set_conformance():
    state, store, pipeline = make_pipeline()
    ok_job = store.submit_upgrade(state, "grasp", "v1.1.0", soak_ticks=2, tick_interval=0)
    run(pipeline.run_job(ok_job))
    rb_job = store.submit_upgrade(state, "place", "v1.1.0", soak_ticks=2, tick_interval=0)
    run(pipeline.run_job(rb_job, PipelineHooks(metrics_provider=lambda ws: CanaryMetrics(ws, 1, 1))))
    observed = pipeline.guard.writes
    exact = set(observed) == set(DECLARED_WRITE_SETS) and matches_exactly(DECLARED_WRITE_SETS, observed) == {}

    st = AgentState.create(["grasp"])
    js = JobStore()
    rogue = tp.PersonaWritingPipeline(st, js, refuse_manifest_writes=False)
    job = js.submit_upgrade(st, "grasp", "v1.1.0", soak_ticks=1, tick_interval=0)
    run(rogue.run_job(job))
    flagged = check_write_sets(DECLARED_WRITE_SETS, rogue.guard.writes).violations
    ok = exact and flagged == [("shadow_passed->canary_running", "h_persona")]
    verdict(7, "write-set conformance", ok, f"{len(observed)} transitions match exactly; injected writer flagged {flagged}")


def test_08_conflict_lock():
    rounds, n = 20, 16
    bad = 0
    for _ in range(rounds):
        state, store, _ = make_pipeline()
        barrier = threading.Barrier(n)
        admitted, conflicts = [], []

        def submit():
            barrier.wait()
            try:
                admitted.append(store.submit_upgrade(state, "grasp", SemVer(1, 1, 0)).job_id)
            except UpgradeConflict as exc:
                conflicts.append(exc.job_id)

        threads = [threading.Thread(target=submit) for _ in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if len(admitted) != 1 or conflicts != admitted * (n - 1):
            bad += 1
    verdict(8, "conflict lock", bad == 0, f"{rounds} rounds x {n} threads, {bad} rounds with a second admission")


def test_09_behavioral_suite():
    checks = {
        "terminal-set membership": lambda: tp.test_canary_reaches_terminal(PipelineHooks(validator=lambda n, v: False)),
        "gate isolation": lambda: tp.test_validator_isolated(False),
        "409 guard": lambda: tp.test_concurrent_upgrade_409(make_pipeline()),
        "rollback closure": lambda: tp.test_crash_rolls_back(make_pipeline()),
        "timezone fix": lambda: tp.test_metrics_naive_tz_in_pipeline(make_pipeline()),
        "pending-review filter": lambda: tp.test_pending_review_excluded_in_pipeline(make_pipeline()),
        "no-traffic promote": lambda: tp.test_no_traffic_promotes(make_pipeline()),
        "threshold rollback": lambda: tp.test_threshold_rolls_back(make_pipeline()),
        "mid-window short-circuit": lambda: tp.test_mid_window_short_circuits(make_pipeline()),
    }
    failed = []
    for name, check in checks.items():
        try:
            check()
        except AssertionError:
            failed.append(name)
    verdict(9, "behavioral suite", not failed, f"{len(checks) - len(failed)}/{len(checks)} categories pass" + (f", failed {failed}" if failed else ""))


def test_10_statistics():
    rng = random.Random(2024)
    xs = [rng.gauss(10.0, 2.0) for _ in range(100)]
    ci = bca_interval(xs, resamples=10_000)
    lo, hi = percentile_oracle(xs, resamples=10_000)
    err = max(abs(ci.lower - lo) / abs(lo), abs(ci.upper - hi) / abs(hi))
    degenerate = bca_interval([4.2] * 30)
    rep = measure_latency(30, resamples=10_000)
    full = rep.stages["full_plus_soak"]
    fast = rep.stages["val_plus_shadow"]
    fields_ok = all({"p50", "p95", "p99"} == set(s.percentiles) and s.interval.lower <= s.interval.upper for s in rep.stages.values())
    ok = (
        err < 0.05
        and (degenerate.lower, degenerate.upper) == (4.2, 4.2)
        and fields_ok
        and full.interval.mean >= rep.soak_ms
        and fast.interval.mean * 10 <= full.interval.mean
    )
    verdict(
        10,
        "statistics",
        ok,
        f"max endpoint err={err:.4f}; degenerate=[{degenerate.lower}, {degenerate.upper}]; "
        f"val_plus_shadow={fast.interval.mean:.3f}ms full_plus_soak={full.interval.mean:.1f}ms soak={rep.soak_ms:.0f}ms",
    )


def test_11_audit_chain():
    state, store, pipeline = make_pipeline()
    baseline = state.identity()
    for v in ("v1.1.0", "v1.2.0"):
        run(pipeline.run_job(store.submit_upgrade(state, "grasp", v, soak_ticks=1, tick_interval=0)))
    rb = store.submit_upgrade(state, "place", "v1.1.0", soak_ticks=2, tick_interval=0)
    run(pipeline.drive(rb, PipelineHooks(metrics_provider=lambda ws: 1 / 0)))
    chain = state.audit
    intact = verify_chain(chain) is None
    detected = 0
    for i in range(len(chain)):
        original = chain._records[i]
        chain._records[i] = replace(original, payload=original.payload + " ")
        detected += verify_chain(chain) == i
        chain._records[i] = original
    single = chain.query_by_identity(baseline) == chain.records
    kinds = {r.kind for r in chain}
    ok = intact and detected == len(chain) and single and AuditKind.ROLLBACK_REASON in kinds
    verdict(11, "audit chain", ok, f"{detected}/{len(chain)} tampered records detected; baseline query returns all={single}")
