import pytest

from canary_identity.cli import build_parser, main


def test_verify(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "verify", "--names", "2", "--versions", "3"]) == 0
    out = capsys.readouterr().out
    assert "states explored: 18, max depth: 7" in out
    assert (tmp_path / "verify_ican.csv").read_text().startswith("invariant,states,depth,violations")


def test_verify_strawman_reports_counterexample(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "verify", "--mode", "strawman"]) == 0
    assert "IdentityInvariant: FAIL" in capsys.readouterr().out


def test_cycles(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "cycles", "--n", "3", "--soak-ticks", "2", "--tick-ms", "1"]) == 0
    assert "unique_hashes=1" in capsys.readouterr().out
    assert (tmp_path / "cycles_ican.csv").exists()
    assert (tmp_path / "transitions_ican.csv").exists()


def test_crash_and_fuzz(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "crash", "--runs", "3", "--ticks", "1,2", "--tick-ms", "1"]) == 0
    assert "rolled_back=3/3" in capsys.readouterr().out
    assert main(["fuzz", "--seeds", "20"]) == 0
    assert "violations: 0" in capsys.readouterr().out


def test_latency(tmp_path, capsys):
    args = ["--out", str(tmp_path), "latency", "--n", "10", "--resamples", "200", "--soak-ticks", "1", "--tick-ms", "1"]
    assert main(args) == 0
    assert "full_plus_soak" in capsys.readouterr().out
    assert (tmp_path / "latency.csv").exists()


def test_power(capsys):
    assert main(["power"]) == 0
    assert capsys.readouterr().out.strip() == "N = 4 (raw 3.473)"


def test_subcommand_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
