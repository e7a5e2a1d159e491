"""Command line: run scenarios, verify traces, recompute metrics, sweep grids.

Exit codes: 0 ok, 1 validation or parse error, 2 runtime failure (including a
total-failure event), 3 verification failure.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import sys
from pathlib import Path

from .runner import run_scenario
from .scenario import ScenarioError, generate_topology, load_scenario
from .verify import (
    TraceError, all_passed, compute_metrics, format_metrics, format_report, parse_metrics,
    parse_trace, verify_records,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _load(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
    if args.horizon is not None:
        sc.horizon = args.horizon
    sc.validate()
    return sc


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_scenario(sc)
    (out / "trace.txt").write_text(res.trace_text)
    (out / "metrics.txt").write_text(format_metrics(res.metrics))
    print(f"wrote {out / 'trace.txt'} and {out / 'metrics.txt'}")
    if res.metrics["total_failure"] != "0":
        print("run ended in total failure", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_verify(args) -> int:
    records = parse_trace(Path(args.trace).read_text())
    results = verify_records(records)
    sys.stdout.write(format_report(results))
    return EXIT_OK if all_passed(results) else EXIT_VERIFY


def cmd_metrics(args) -> int:
    metrics = compute_metrics(parse_trace(Path(args.trace).read_text()))
    sys.stdout.write(format_metrics(metrics))
    if args.check:
        try:
            stored = parse_metrics(Path(args.check).read_text())
        except ValueError as exc:
            raise TraceError(0, f"{args.check}: {exc}") from None
        if stored != metrics:
            diff = sorted(k for k in set(stored) | set(metrics) if stored.get(k) != metrics.get(k))
            print(f"metrics differ from {args.check}: {', '.join(diff)}", file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


SWEEP_COLUMNS = ("delta_n", "k_r", "k_p", "m", "seed", "verify", "messages_committed", "acks_emitted",
                 "control_messages", "explicit_requests", "reformations", "total_failure",
                 "latency_mean_us", "latency_p95_us")


def cmd_sweep(args) -> int:
    base = _load(args)
    if args.m and base.generate_spec is None:
        raise ScenarioError("generate", None, "sweeping m needs a scenario with a [generate] section")
    grid = itertools.product(args.delta_n or [base.delta_n], args.k_r or [base.k_r],
                             args.k_p or [base.nack_k_p], args.m or [len(base.primaries)],
                             range(base.seed, base.seed + args.seeds))
    rows = ["\t".join(SWEEP_COLUMNS)]
    worst = EXIT_OK
    for delta_n, k_r, k_p, m, seed in grid:
        sc = copy.deepcopy(base)
        sc.delta_n, sc.k_r, sc.nack_k_p, sc.seed = delta_n, k_r, k_p, seed
        if args.m:
            generate_topology(sc, **{**base.generate_spec, "primaries": m})
        sc.validate()
        res = run_scenario(sc)
        ok = all_passed(verify_records(parse_trace(res.trace_text)))
        if not ok:
            worst = EXIT_VERIFY
        row = {"delta_n": delta_n, "k_r": k_r, "k_p": k_p, "m": len(sc.primaries), "seed": seed,
               "verify": "pass" if ok else "FAIL", **res.metrics}
        rows.append("\t".join(str(row[c]) for c in SWEEP_COLUMNS))
        print(rows[-1])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.tsv").write_text("\n".join(rows) + "\n")
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stockcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--horizon", type=float, help="override the simulated horizon (seconds)")

    p = sub.add_parser("run", help="simulate a scenario, write trace.txt and metrics.txt")
    scenario_args(p)
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check protocol invariants over a trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="recompute metrics from a trace")
    p.add_argument("trace")
    p.add_argument("--check", metavar="METRICS", help="compare with a metrics file; exit 3 on mismatch")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="run a parameter grid over delta_n, k_r, k_p and m")
    scenario_args(p)
    p.add_argument("--out", help="directory for sweep.tsv")
    p.add_argument("--delta-n", type=_floats, help="comma-separated delta_n values (seconds)")
    p.add_argument("--k-r", type=_ints, help="comma-separated k_r values")
    p.add_argument("--k-p", type=_ints, help="comma-separated k_p values")
    p.add_argument("--m", type=_ints, help="comma-separated ring sizes (needs [generate])")
    p.add_argument("--seeds", type=int, default=1, help="seeds per grid point, counting up from --seed")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else escaped the simulator itself
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
