import itertools

import pytest

import canary_identity.pipeline as pipeline_module
from canary_identity.identity import SemVer
from canary_identity.pipeline import EvolutionJob, JobStatus
from canary_identity.verification.fuzz import (
    BRANCHES,
    TraceRow,
    check_trace,
    fuzz,
    generate_workload,
    run_seed,
)
from canary_identity.verification.model import ModelState, enumerate_reachable, successors
from canary_identity.verification.writesets import lint_module, lint_source

S = JobStatus


def _oracle_closure(n_names, n_versions):
    """Least fixpoint of a hand-written step relation over plain tuples."""

    def step(s):
        st, V, Vp = s
        none = (None,) * n_names
        if st == "pending":
            yield ("validating", V, Vp)
        elif st == "validating":
            yield ("shadow_running", V, Vp)
            yield ("rejected", V, Vp)
        elif st == "shadow_running":
            yield ("shadow_passed", V, Vp)
            yield ("rejected", V, Vp)
        elif st == "shadow_passed":
            for n, v in itertools.product(range(n_names), range(n_versions)):
                if v != V[n]:
                    yield ("canary_running", V, tuple(v if i == n else None for i in range(n_names)))
        elif st == "canary_running":
            yield ("canary_promoted", V, Vp)
            yield ("rolled_back", V, none)
        elif st == "canary_promoted":
            n = next(i for i, x in enumerate(Vp) if x is not None)
            yield ("promoted", tuple(Vp[n] if i == n else V[i] for i in range(n_names)), none)
            yield ("rolled_back", V, none)

    seen = {("pending", (0,) * n_names, (None,) * n_names)}
    while True:
        grown = seen | {t for s in seen for t in step(s)}
        if grown == seen:
            return seen
        seen = grown


def _as_tuples(report):
    return {(s.status.value, s.V, s.Vp) for s in report.reachable}


@pytest.mark.parametrize("n,v,count", [(1, 2, 9), (2, 3, 18), (3, 2, 15)])
def test_reachable_set_matches_oracle(n, v, count):
    report = enumerate_reachable(n, v)
    oracle = _oracle_closure(n, v)
    assert _as_tuples(report) == oracle
    assert report.states_explored == len(oracle) == count
    assert report.max_depth == 7


def test_ican_all_invariants_hold():
    report = enumerate_reachable(2, 3, "ican")
    assert report.ok
    assert "IdentityInvariant: PASS" in report.text()
    lines = report.csv().splitlines()
    assert lines[0] == "invariant,states,depth,violations"
    assert lines[1:] == [f"{inv},18,7,0" for inv in ("IdentityInvariant", "StateInvariant", "VInvariant", "VpInvariant")]


def test_strawman_identity_counterexample():
    report = enumerate_reachable(2, 3, "strawman")
    traces = report.violated("IdentityInvariant")
    assert traces
    assert not report.violated("VpInvariant")
    assert any(step.startswith("EnterCanary") for step in traces[0])
    assert traces[0][0].startswith("Init")


def test_guard_off_breaks_vp_invariant():
    report = enumerate_reachable(1, 2, rollback_guard=False)
    assert report.violated("VpInvariant")
    assert not report.violated("IdentityInvariant")


def test_broken_successor_trips_v_and_state():
    def leaky(s, n_versions, rollback_guard=True):
        for action, t in successors(s, n_versions, rollback_guard):
            if action == "MetricsPass":
                # early write to V and a skipped status
                t = ModelState(S.PROMOTED, tuple(x if x is not None else v for x, v in zip(s.Vp, s.V)), s.Vp)
            yield action, t

    report = enumerate_reachable(1, 2, successor_fn=leaky)
    assert report.violated("VInvariant")
    assert report.violated("StateInvariant")
    assert report.violated("VpInvariant")


def test_manifest_write_trips_identity():
    def drifting(s, n_versions, rollback_guard=True):
        for action, t in successors(s, n_versions, rollback_guard):
            if action.startswith("EnterCanary"):
                t = ModelState(t.status, t.V, t.Vp, "M1")
            yield action, t

    assert enumerate_reachable(1, 2, successor_fn=drifting).violated("IdentityInvariant")


@pytest.mark.parametrize("args", [(0, 2), (1, 1)])
def test_model_bounds(args):
    with pytest.raises(ValueError):
        enumerate_reachable(*args)


# -- static lint ---------------------------------------------------------------


def test_pipeline_source_has_no_manifest_writes():
    assert lint_module(pipeline_module) == []


def test_lint_flags_each_write_form():
    src = "\n".join(
        [
            "state.manifest.h_persona = b''",
            "m = replace(m, h_env=x)",
            "setattr(m, 'v_rt', '1')",
            "d['h_registry'] = 1",
            "m.m_prompt += 'x'",
            "ok = state.active",
        ]
    )
    assert lint_source(src) == [(1, "h_persona"), (2, "h_env"), (3, "v_rt"), (4, "h_registry"), (5, "m_prompt")]


# -- fuzzer --------------------------------------------------------------------


def test_workload_deterministic():
    assert generate_workload(7) == generate_workload(7)
    assert generate_workload(7) != generate_workload(8)


def test_seed_replay_deterministic():
    a, b = run_seed(11), run_seed(11)
    assert a.trace_text() == b.trace_text()
    assert a.branches == b.branches


def test_fuzz_ican_clean_with_full_coverage():
    report = fuzz(600)
    assert report.ok, report.violations[:3]
    assert report.uncovered() == ([], [])
    assert set(report.branch_coverage) == set(BRANCHES)


def test_fuzz_strawman_violates_exactly_on_canary_entry():
    report = fuzz(200, "strawman")
    assert report.violating_seeds == report.seeds_reaching_canary
    assert report.violating_seeds
    assert {inv for _, inv, _ in report.violations} == {"IdentityInvariant"}


def test_check_trace_flags_tampered_rows():
    res = run_seed(3)
    jobs = {}
    base = res.trace[0].identity_hex
    bad = TraceRow("job-000001", "a", "b", "f" * 64, (), (("grasp", "v9.9.9"),))
    # a provisional entry outside the canary window is a VpInvariant breach
    job = EvolutionJob("job-000001", "grasp", SemVer(9, 9, 9), SemVer(1, 0, 0))
    jobs[job.job_id] = job
    found = {inv for inv, _ in check_trace(base, [bad], jobs, "ican")}
    assert {"IdentityInvariant", "VpInvariant", "StateInvariant"} <= found
