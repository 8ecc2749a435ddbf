"""Command line entry point ``dsmr-lab``.

::

    dsmr-lab run <study> [--config FILE] [--seed S] [--paths N] [--out DIR] [--workers W] [--dump-paths]
    dsmr-lab scheme audit [--scheme NAME ...] [--out DIR]
    dsmr-lab kernels audit --family F [--scheme NAME] [--sigma S] [--paths N] [--seed S] [--out DIR]
    dsmr-lab verify REPORT.json [--workers W]

Exit status: 0 when every verdict passes (or ``verify`` reproduces the rows),
1 when a verdict fails or rows differ, 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, DSMRError
from .config import STUDIES, build_config, load_config
from .report import StudyReport, diff_rows, load_report, write_report
from .studies import RunContext, run_study


def _print_report(report: StudyReport, out: Path | None) -> None:
    for name, v in report.verdicts.items():
        print(f"{v.status.upper():13s} {name}: {v.detail}")
    print(f"study {report.study}: {'PASS' if report.passed else 'FAIL'} "
          f"({report.metadata['wall_time_s']:.1f} s, {len(report.rows)} rows)")
    if out is not None:
        print(f"wrote {out / 'report.json'} and {out / 'rows.csv'}")


def _execute(cfg, args) -> int:
    out = Path(args.out or cfg.out or f"results/{cfg.study}")
    dump = out / "paths" if getattr(args, "dump_paths", False) else None
    report = run_study(cfg, RunContext(workers=args.workers, dump_dir=dump))
    write_report(report, out)
    _print_report(report, out)
    return 0 if report.passed else 1


def _cmd_run(args) -> int:
    overrides = {"seed": args.seed, "n_paths": args.paths}
    if args.config:
        cfg = load_config(args.config, overrides)
        if cfg.study != args.study:
            raise ConfigError(f"config is for study {cfg.study!r}, not {args.study!r}")
    else:
        cfg = build_config({"study": args.study, **{k: v for k, v in overrides.items() if v is not None}})
    return _execute(cfg, args)


def _cmd_scheme_audit(args) -> int:
    raw = {"study": "scheme_audit"}
    if args.scheme:
        raw["schemes"] = args.scheme
    return _execute(build_config(raw), args)


def _cmd_kernels_audit(args) -> int:
    case = {"family": args.family}
    if args.scheme:
        case["scheme"] = args.scheme
    raw = {"study": "kernel_audit", "cases": [case], "sigma": args.sigma}
    if args.paths is not None:
        raw["n_paths"] = args.paths
    if args.seed is not None:
        raw["seed"] = args.seed
    return _execute(build_config(raw), args)


def _cmd_verify(args) -> int:
    path = Path(args.report)
    saved = load_report(path)
    cfg = build_config(saved["config"])
    report = run_study(cfg, RunContext(workers=args.workers))
    rows_file = path.parent / "rows.csv"
    expected = rows_file.read_text() if rows_file.exists() else None
    if expected is None:
        print(f"no rows.csv next to {path}", file=sys.stderr)
        return 1
    diffs = diff_rows(expected, report.rows_csv())
    if diffs:
        print(f"MISMATCH: {len(diffs)} differing line(s)")
        for line in diffs[:20]:
            print("  " + line)
        return 1
    print(f"OK: {len(report.rows)} rows reproduced byte for byte")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsmr-lab", description="Discrete stochastic maximal regularity studies")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study and write report.json and rows.csv")
    run.add_argument("study", choices=STUDIES)
    run.add_argument("--config", help="YAML study config")
    run.add_argument("--seed", type=int)
    run.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    run.add_argument("--out", help="output directory (default results/<study>)")
    run.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    run.add_argument("--dump-paths", action="store_true", help="write the sampled increments under <out>/paths")
    run.set_defaults(func=_cmd_run)

    scheme = sub.add_parser("scheme", help="scheme catalog tools")
    ssub = scheme.add_subparsers(dest="action", required=True)
    sa = ssub.add_parser("audit", help="order, stability and decay estimates")
    sa.add_argument("--scheme", action="append", help="scheme name (repeatable; default: whole catalog)")
    sa.add_argument("--out", default=None)
    sa.add_argument("--workers", type=int)
    sa.set_defaults(func=_cmd_scheme_audit)

    kern = sub.add_parser("kernels", help="convolution kernel tools")
    ksub = kern.add_subparsers(dest="action", required=True)
    ka = ksub.add_parser("audit", help="uniform K_tau bound scan and operator probes for one family")
    ka.add_argument("--family", required=True)
    ka.add_argument("--scheme")
    ka.add_argument("--sigma", type=float, default=0.25)
    ka.add_argument("--paths", type=int)
    ka.add_argument("--seed", type=int)
    ka.add_argument("--out", default=None)
    ka.add_argument("--workers", type=int)
    ka.set_defaults(func=_cmd_kernels_audit)

    ver = sub.add_parser("verify", help="recompute a report and diff its rows")
    ver.add_argument("report")
    ver.add_argument("--workers", type=int)
    ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DSMRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
