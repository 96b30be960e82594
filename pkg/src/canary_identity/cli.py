"""Command-line entry point: ``canary-identity <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .bench import harness
from .bench.stats import power_sample_size, power_sample_size_raw
from .pipeline import DEFAULT_SOAK_TICKS, DEFAULT_TICK_INTERVAL


def _ticks(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _out(args, name: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def cmd_cycles(args) -> int:
    res = harness.run_cycles(args.n, args.mode, soak_ticks=args.soak_ticks, tick_interval=args.tick_ms / 1000)
    res.write_csv(_out(args, f"cycles_{args.mode}.csv"))
    res.write_transitions_csv(_out(args, f"transitions_{args.mode}.csv"))
    print(res.summary())
    if args.mode == "ican":
        return 0 if res.unique_hashes == 1 and res.drift_events == 0 else 1
    return 0 if all(t.distinct_hashes == 3 for t in res.traces) else 1


def cmd_crash(args) -> int:
    rep = harness.run_crash_injection(
        args.runs,
        _ticks(args.ticks),
        rollback_guard=not args.no_guard,
        seed=args.seed,
        soak_ticks=args.soak_ticks,
        tick_interval=args.tick_ms / 1000,
    )
    print(rep.summary())
    return 0


def cmd_latency(args) -> int:
    rep = harness.measure_latency(
        args.n, resamples=args.resamples, seed=args.seed, soak_ticks=args.soak_ticks, tick_interval=args.tick_ms / 1000
    )
    rep.write_csv(_out(args, "latency.csv"))
    print(rep.summary())
    return 0


def cmd_verify(args) -> int:
    from .verification.model import enumerate_reachable

    rep = enumerate_reachable(args.names, args.versions, args.mode, rollback_guard=not args.no_guard)
    _out(args, f"verify_{args.mode}.csv").write_text(rep.csv())
    print(rep.text())
    return 0 if rep.ok or args.mode == "strawman" else 1


def cmd_fuzz(args) -> int:
    from .verification.fuzz import fuzz

    logging.getLogger("canary_identity.pipeline").setLevel(logging.ERROR)
    rep = fuzz(args.seeds, args.mode, args.start)
    print(rep.text())
    return 0 if rep.ok or args.mode == "strawman" else 1


def cmd_power(args) -> int:
    raw = power_sample_size_raw(args.alpha, args.power, args.sigma, args.delta)
    print(f"N = {power_sample_size(args.alpha, args.power, args.sigma, args.delta)} (raw {raw:.3f})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app
    from .engine import Engine

    engine = Engine(soak_ticks=args.soak_ticks, tick_interval=args.tick_ms / 1000)
    uvicorn.run(create_app(engine), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="canary-identity", description=__doc__)
    p.add_argument("--out", default="results", help="directory for CSV output")
    sub = p.add_subparsers(dest="command", required=True)

    def soak(sp):
        sp.add_argument("--soak-ticks", type=int, default=DEFAULT_SOAK_TICKS)
        sp.add_argument("--tick-ms", type=float, default=DEFAULT_TICK_INTERVAL * 1000)

    sp = sub.add_parser("cycles", help="N canary cycles with identity checkpoints")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--mode", choices=harness.MODES, default="ican")
    soak(sp)
    sp.set_defaults(func=cmd_cycles)

    sp = sub.add_parser("crash", help="metrics-provider fault injection")
    sp.add_argument("--runs", type=int, default=50)
    sp.add_argument("--ticks", default="1,2,3,4")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-guard", action="store_true", help="regression control without the rollback closure")
    soak(sp)
    sp.set_defaults(func=cmd_crash)

    sp = sub.add_parser("latency", help="per-stage latency with BCa intervals")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--resamples", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    soak(sp)
    sp.set_defaults(func=cmd_latency)

    sp = sub.add_parser("verify", help="explicit-state reachability check")
    sp.add_argument("--names", type=int, default=2)
    sp.add_argument("--versions", type=int, default=3)
    sp.add_argument("--mode", choices=("ican", "strawman"), default="ican")
    sp.add_argument("--no-guard", action="store_true")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("fuzz", help="seeded workload fuzzer")
    sp.add_argument("--seeds", type=int, default=10_000)
    sp.add_argument("--mode", choices=("ican", "strawman"), default="ican")
    sp.add_argument("--start", type=int, default=0)
    sp.set_defaults(func=cmd_fuzz)

    sp = sub.add_parser("power", help="a-priori sample size")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--power", type=float, default=0.80)
    sp.add_argument("--sigma", type=float, default=1.06)
    sp.add_argument("--delta", type=float, default=2.0)
    sp.set_defaults(func=cmd_power)

    sp = sub.add_parser("serve", help="run the HTTP API")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    soak(sp)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
