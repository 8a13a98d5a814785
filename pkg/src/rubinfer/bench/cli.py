"""``bench`` command line: run experiments, render charts, check acceptance.

::

    bench sanity   --config F --out D
    bench scenario --config F --out D [--force-da-rate R] [--methods LIST]
    bench plots    --csv F --out D
    bench verify   --out D

``--config`` takes a JSON file or the name of a bundled config (``sanity``,
``sanity_smoke``, ``consistent``, ``inconsistent``, ``inconsistent_mixed``,
``smoke``).  ``BENCH_SEED`` overrides the config seed.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

from ..errors import ConfigError, RubError
from ..factors import format_factors
from .. import sim
from .config import SanityConfig, ScenarioConfig, load_config, with_seed_override
from .plots import emit_plots
from .records import write_csv
from .sanity import median_times, run_sanity
from .scenario import consistency_rate, cumulative_time, run_scenario


def _config(source, kind):
    cfg = with_seed_override(load_config(source))
    if not isinstance(cfg, kind):
        raise ConfigError(f"{source!r} is not a {kind.__name__}")
    return cfg


def _out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sanity(args) -> int:
    cfg = _config(args.config, SanityConfig)
    out = _out(args.out)
    records = run_sanity(cfg, progress=lambda n_s, n_f: print(f"  ns={n_s} nf={n_f}",
                                                              file=sys.stderr))
    csv_path = out / f"{cfg.name}.csv"
    csv_path.write_text(write_csv(records))
    names = [m for m in cfg.methods]
    print("scenario".ljust(28) + "".join(m.rjust(12) for m in names) + "   (median us)")
    for scen in dict.fromkeys(r.scenario for r in records):
        t = median_times(records, scen)
        print(scen.ljust(28) + "".join(f"{t[m] / 1e3:12.1f}" for m in names))
    print(f"wrote {csv_path}")
    return 0


def cmd_scenario(args) -> int:
    cfg = _config(args.config, ScenarioConfig)
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else None
    out = _out(args.out)

    def progress(step, belief):
        if step % 20 == 0:
            print(f"  step {step}/{cfg.steps}", file=sys.stderr)

    res = run_scenario(cfg, methods=methods, force_da_rate=args.force_da_rate, progress=progress)
    csv_path = out / f"{cfg.name}.csv"
    csv_path.write_text(write_csv(res.records))
    (out / "truth.jsonl").write_text(sim.truth_stream_text(res.truth))
    (out / "factors.txt").write_text(format_factors(res.factors))
    lines = ["step,true_x,true_y,true_th,est_x,est_y,est_th"]
    for t, truth, est in res.trajectory():
        lines.append(",".join([str(t)] + [repr(float(v)) for v in (*truth, *est)]))
    (out / "trajectory.csv").write_text("\n".join(lines) + "\n")

    base = cumulative_time(res.records, "ISAM")
    for m in dict.fromkeys(r.method for r in res.records):
        total = cumulative_time(res.records, m)
        ratio = f"  ratio {total / base:.3f}" if base and m != "ISAM" else ""
        print(f"{m:>10}  cumulative {total / 1e9:8.3f} s{ratio}")
    rub = next((m for m in ("UD_OTM_OO", "OTM_OO", "OTM", "DU", "DU_OO")
                if any(r.method == m for r in res.records)), None)
    if rub is not None:
        print(f"DA consistency rate ({rub}): {consistency_rate(res.records, rub):.3f}")
    print("max diff vs baseline: " + ", ".join(f"{k} {v:.2e}" for k, v in res.max_diff.items()))
    print(f"wall {res.wall_s:.1f} s; wrote {csv_path}")
    return 0


def cmd_plots(args) -> int:
    for path in emit_plots(args.csv, args.out):
        print(f"wrote {path}")
    return 0


def find_acceptance_suite(start=None) -> Path:
    """Locate ``tests/test_acceptance.py`` above ``start`` or the installed package."""
    bases = [Path(start or Path.cwd()).resolve(), Path(__file__).resolve()]
    for base in bases:
        for d in [base, *base.parents]:
            candidate = d / "tests" / "test_acceptance.py"
            if candidate.is_file():
                return candidate
    raise ConfigError("cannot find tests/test_acceptance.py (run from the source checkout)")


def verdicts(junit_xml: Path) -> list[tuple[str, str]]:
    """``(test name, PASS|FAIL|SKIP)`` for every case of a JUnit XML report."""
    out = []
    for case in ET.parse(junit_xml).getroot().iter("testcase"):
        if case.find("failure") is not None or case.find("error") is not None:
            status = "FAIL"
        elif case.find("skipped") is not None:
            status = "SKIP"
        else:
            status = "PASS"
        out.append((case.get("name"), status))
    return out


def cmd_verify(args) -> int:
    suite = find_acceptance_suite()
    out = _out(args.out).resolve()
    report = out / "acceptance.xml"
    env = dict(os.environ, ACCEPTANCE_OUT=str(out))
    proc = subprocess.run([sys.executable, "-m", "pytest", str(suite), "-q", "-p", "no:cacheprovider",
                           f"--junitxml={report}"], cwd=suite.parent.parent, env=env,
                          capture_output=True, text=True)
    (out / "acceptance.log").write_text(proc.stdout + proc.stderr)
    if not report.exists():
        sys.stderr.write(proc.stdout + proc.stderr)
        return 2
    rows = verdicts(report)
    width = max((len(n) for n, _ in rows), default=4)
    table = [f"{'test'.ljust(width)}  result", f"{'-' * width}  ------"]
    table += [f"{n.ljust(width)}  {s}" for n, s in rows]
    text = "\n".join(table) + "\n"
    (out / "verify.txt").write_text(text)
    print(text, end="")
    failed = sum(s == "FAIL" for _, s in rows)
    print(f"{len(rows) - failed}/{len(rows)} passed; details in {out / 'acceptance.log'}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sanity", help="dense microbenchmark grid")
    s.add_argument("--config", default="sanity")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sanity)

    s = sub.add_parser("scenario", help="simulated plan-act-infer run")
    s.add_argument("--config", default="consistent")
    s.add_argument("--out", required=True)
    s.add_argument("--force-da-rate", type=float, default=None,
                   help="override the configured inconsistency rate")
    s.add_argument("--methods", default=None, help="comma-separated method names")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("plots", help="render SVG charts of a benchmark CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plots)

    s = sub.add_parser("verify", help="run the acceptance suite and print a pass/fail table")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RubError as exc:
        print(f"bench {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
