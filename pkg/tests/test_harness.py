import csv

import pytest

from canary_identity.bench.harness import CHECKPOINTS, measure_latency, run_crash_injection, run_cycles


def test_cycles_ican_single_hash(tmp_path):
    res = run_cycles(5, "ican", soak_ticks=2, tick_interval=0.001)
    assert len(res.rows) == 5 * len(CHECKPOINTS)
    assert res.unique_hashes == 1
    assert res.drift_events == 0
    path = tmp_path / "c.csv"
    res.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["cycle", "checkpoint", "identity_hash_hex8"]
    assert len(rows) == 21
    res.write_transitions_csv(tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 5 * 7


def test_cycles_strawman_three_per_cycle():
    res = run_cycles(4, "strawman", soak_ticks=2, tick_interval=0.001)
    assert [t.distinct_hashes for t in res.traces] == [3, 3, 3, 3]
    # promoted and post_terminal share a hash; the pre-canary one never recurs
    for t in res.traces:
        cp = t.checkpoints
        assert cp["promoted"] == cp["post_terminal"]
        assert len({cp["pre_canary"], cp["canary_running"], cp["promoted"]}) == 3


def test_cycles_bad_args():
    with pytest.raises(ValueError):
        run_cycles(0)
    with pytest.raises(ValueError):
        run_cycles(1, "other")


def test_crash_injection_and_control():
    ok = run_crash_injection(8, (1, 2, 3, 4), tick_interval=0.001)
    assert ok.rolled_back_count == ok.vp_clear_count == ok.identity_stable_count == ok.v_unchanged_count == 8
    assert set(ok.fault_ticks) <= {1, 2, 3, 4}
    ctl = run_crash_injection(8, (1, 2, 3, 4), rollback_guard=False, tick_interval=0.001)
    assert ctl.rolled_back_count == 0
    assert ctl.vp_clear_count == 0


def test_crash_tick_bounds():
    with pytest.raises(ValueError):
        run_crash_injection(1, (5,))
    with pytest.raises(ValueError):
        run_crash_injection(1, ())


def test_latency_report(tmp_path):
    rep = measure_latency(12, resamples=500, soak_ticks=2, tick_interval=0.005)
    assert set(rep.stages) == {"val_plus_shadow", "full_plus_soak"}
    for s in rep.stages.values():
        assert len(s.samples) == 12
        assert s.interval.lower <= s.interval.mean <= s.interval.upper
        assert set(s.percentiles) == {"p50", "p95", "p99"}
    assert min(rep.stages["full_plus_soak"].samples) >= rep.soak_ms
    assert "CI95" in rep.summary()
    rep.write_csv(tmp_path / "l.csv")
    assert len((tmp_path / "l.csv").read_text().splitlines()) == 1 + 24
    with pytest.raises(ValueError):
        measure_latency(5)
