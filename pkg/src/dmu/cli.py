"""``dmu`` command line: train, sweep, thresholds, landscape, dag.

Exit codes: 0 success, 2 a benchmark run did not converge (or a check
missed its tolerance), 1 any tooling or usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import dag, report
from .core import DmuError
from .landscape import AXES, Axis, ScanSpec, scan, subtraction_saddle_spec, unimodality_check
from .reference import THRESHOLDS, published_threshold
from .tasks import OPERATIONS, TaskError, TaskSpec, builtin_ranges, get_range, load_range_table
from .thresholds import (
    CSV_FIELDS as THRESHOLD_FIELDS,
    DEFAULT_EPSILON,
    FAST_N,
    FULL_N,
    PERTURB_ALL,
    PERTURB_MODES,
    read_threshold_csv,
    records_to_csv,
    threshold_table,
)
from .trainer import CSV_FIELDS as RECORD_FIELDS
from .trainer import TrainConfig, summarize, sweep, train_one

OUT_ENV = "DMU_OUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
DAG_TOLERANCE = 1e-5

COLUMNS_HELP = f"""\
records.csv columns: {', '.join(RECORD_FIELDS)}
thresholds.csv columns: {', '.join(THRESHOLD_FIELDS)}
landscape CSV columns: x,loss (1-D) or x,y,loss (2-D, row-major, x outer)
Floats are written in shortest round-trip form.
Output directory defaults to ${OUT_ENV}, else ./dmu-out.
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "dmu-out")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _ranges(args):
    table = load_range_table(args.range_table) if args.range_table else builtin_ranges()
    return table


def _check_op(op: str):
    if op not in OPERATIONS:
        raise UsageError(f"unknown op {op!r}; valid: {', '.join(OPERATIONS)}")


def _train_config(args) -> TrainConfig:
    keys = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in vars(args).items() if k in keys and v is not None})


def _threshold_source(args, pairs, jobs):
    """Threshold for each ``(op, range)`` pair plus the records if computed here."""
    src = args.thresholds
    if src == "published":
        missing = [p for p in pairs if p[1].name not in THRESHOLDS]
        if missing:
            raise UsageError(f"no published threshold for range {missing[0][1].name!r}")
        return {(op, r.name): published_threshold(op, r.name) for op, r in pairs}, None
    if src == "computed":
        n = FAST_N if args.fast else FULL_N
        ops = list(dict.fromkeys(op for op, _ in pairs))
        rngs = list({r.name: r for _, r in pairs}.values())
        recs = threshold_table(ops, rngs, n=n, jobs=jobs)
        return {(r.operation, r.range_name): r.threshold for r in recs}, recs
    table = read_threshold_csv(src)
    missing = [f"{op}/{r.name}" for op, r in pairs if (op, r.name) not in table]
    if missing:
        raise UsageError(f"threshold file lacks {', '.join(missing)}")
    return table, None


# --- subcommands ----------------------------------------------------------


def cmd_train(args) -> int:
    _check_op(args.op)
    rng = get_range(args.range, _ranges(args))
    config = _train_config(args)
    thr, _ = _threshold_source(args, [(args.op, rng)], jobs=1)
    rec = train_one(TaskSpec(args.op, rng, seed=args.seed), config, thr[(args.op, rng.name)])
    print(json.dumps(_jsonable(rec.as_dict()), sort_keys=True))
    if rec.error:
        return EXIT_ERROR
    return EXIT_OK if rec.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    started = report.now_iso()
    ops = _csv_list(args.ops)
    if not ops:
        raise UsageError("--ops is empty")
    for op in ops:
        _check_op(op)
    table = _ranges(args)
    rngs = [get_range(n, table) for n in _csv_list(args.ranges)] if args.ranges else table
    if not rngs:
        raise UsageError("--ranges is empty")
    config = _train_config(args)
    jobs = args.jobs = args.jobs or default_jobs()
    thr, thr_recs = _threshold_source(args, [(op, r) for op in ops for r in rngs], jobs)
    records = sweep(ops, rngs, seeds=args.seeds, config=config, thresholds=thr,
                    base_seed=args.base_seed, jobs=jobs)
    out = _out_dir(args.out)
    outputs = [report.write_atomic(out / "records.csv", report.records_csv(records))]
    if thr_recs is not None:
        outputs.append(report.write_atomic(out / "thresholds.csv", records_to_csv(thr_recs)))
    summary = summarize(records)
    md = report.summary_markdown(summary, rngs)
    if thr_recs is not None:
        md += "\n## Regenerated thresholds\n\n" + report.threshold_markdown(thr_recs)
    outputs.append(report.write_atomic(out / "summary.md", md))
    all_ok = all(r.converged for r in records)
    report.write_manifest(
        out / "manifest.json", "sweep", _manifest_config(args, config), args.base_seed,
        started, outputs,
        wall_time_total=sum(r.wall_time for r in records),
        converged=sum(r.converged for r in records),
        runs=len(records),
    )
    for s in summary.values():
        print(f"{s.operation}: {s.converged}/{s.runs} converged, "
              f"mean step {s.mean_convergence_step:.0f}")
    print(f"wrote {out}")
    if any(r.error for r in records):
        return EXIT_ERROR
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


def cmd_thresholds(args) -> int:
    started = report.now_iso()
    ops = _csv_list(args.ops)
    if not ops:
        raise UsageError("--ops is empty")
    for op in ops:
        _check_op(op)
    table = _ranges(args)
    rngs = [get_range(n, table) for n in _csv_list(args.ranges)] if args.ranges else table
    n = args.n or (FAST_N if args.fast else FULL_N)
    args.jobs = args.jobs or default_jobs()
    recs = threshold_table(ops, rngs, epsilon=args.epsilon, n=n, seed=args.seed,
                           perturb=args.perturb, jobs=args.jobs)
    out = _out_dir(args.out)
    outputs = [
        report.write_atomic(out / "thresholds.csv", records_to_csv(recs)),
        report.write_atomic(out / "thresholds.md", report.threshold_markdown(recs)),
    ]
    report.write_manifest(out / "manifest.json", "thresholds", _manifest_config(args, n=n),
                          args.seed, started, outputs)
    sys.stdout.write(records_to_csv(recs))
    return EXIT_OK


def _parse_axis(text: str) -> Axis:
    parts = text.rsplit(":", 3)
    if len(parts) != 4:
        raise UsageError(f"axis must be name:lo:hi:steps, got {text!r}")
    name, lo, hi, steps = parts
    if name not in AXES:
        raise UsageError(f"unknown axis {name!r}; valid: {', '.join(AXES)}")
    try:
        return Axis(name, float(lo), float(hi), int(steps))
    except ValueError as exc:
        raise UsageError(f"bad axis {text!r}: {exc}") from exc


def cmd_landscape(args) -> int:
    started = report.now_iso()
    if args.preset == "saddle":
        spec = subtraction_saddle_spec(steps=args.steps, range_name=args.range or "pos")
    else:
        if not args.axis:
            raise UsageError("give --axis (once or twice) or --preset saddle")
        if len(args.axis) > 2:
            raise UsageError("at most two axes")
        _check_op(args.op)
        axes = [_parse_axis(a) for a in args.axis]
        spec = ScanSpec(
            operation=args.op,
            range=get_range(args.range or "pos", _ranges(args)),
            axis1=axes[0],
            axis2=axes[1] if len(axes) == 2 else None,
            gate_value=args.gate_value,
            seed=args.seed,
            batch_size=args.batch_size,
        )
    res = scan(spec, jobs=args.jobs or 1)
    if res.y is None:
        ok, idx = unimodality_check(res.loss)
        res.meta["unimodal"] = ok
        res.meta["argmin"] = float(res.x[idx])
        print(f"unimodal={str(ok).lower()} argmin={float(res.x[idx])!r}")
    out = _out_dir(args.out)
    stem = args.name or f"landscape_{spec.operation}_{res.meta['range']}"
    outputs = [
        report.write_atomic(out / f"{stem}.csv", res.to_csv()),
        report.write_atomic(out / f"{stem}.json", res.metadata_json() + "\n"),
    ]
    report.write_manifest(out / f"{stem}.manifest.json", "landscape",
                          _manifest_config(args), args.seed, started, outputs)
    print(f"wrote {outputs[0]} ({len(res.rows())} rows)")
    return EXIT_OK


def _parse_values(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in _csv_list(text)])
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated numbers: {exc}") from exc


def cmd_dag(args) -> int:
    if args.dag_cmd == "compile":
        prog = dag.compile_expression(args.expr)
        text = dag.format_program(prog)
        if args.out:
            report.write_atomic(args.out, text)
        sys.stdout.write(text)
        return EXIT_OK
    if args.dag_cmd == "run":
        prog = dag.parse_program(Path(args.program).read_text())
        y = dag.execute(prog, _parse_values(args.values))
        print(repr(float(y)))
        return EXIT_OK
    err = dag.differential_test(args.expr, trials=args.trials, seed=args.seed)
    ok = err <= DAG_TOLERANCE
    print(f"max_rel_err={err!r} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _manifest_config(args, config: TrainConfig | None = None, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    if config is not None:
        cfg["train_config"] = asdict(config)
    cfg.update(extra)
    return cfg


# --- parser ---------------------------------------------------------------


def _add_common(p, jobs=True):
    p.add_argument("--range-table", help="plain-text range table replacing the built-in one")
    if jobs:
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: available CPUs)")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--post-convergence-steps", dest="post_convergence_steps", type=int,
                   default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--eval-interval", dest="eval_interval", type=int, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--sign-temperature", dest="sign_temperature", type=float, default=None)
    p.add_argument("--gate-temperature", dest="gate_temperature", type=float, default=None)
    p.add_argument("--gate-mode", dest="gate_mode", choices=("logistic", "softmax"), default=None)
    p.add_argument("--thresholds", default="computed",
                   help="'computed' (regenerate), 'published' (reference table) or a thresholds CSV path")
    p.add_argument("--fast", action="store_true", help="regenerate thresholds on 1e5 samples")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmu", description=__doc__.splitlines()[0], epilog=COLUMNS_HELP,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one (op, range, seed) cell")
    t.add_argument("--op", required=True)
    t.add_argument("--range", required=True)
    t.add_argument("--seed", type=int, default=0)
    _add_train_flags(t)
    _add_common(t, jobs=False)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train every op x range x seed cell",
                       epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--seeds", type=int, default=25)
    s.add_argument("--base-seed", dest="base_seed", type=int, default=0)
    s.add_argument("--ops", default=",".join(OPERATIONS))
    s.add_argument("--ranges", default=None, help="comma-separated range names (default: all)")
    s.add_argument("--out", default=None)
    _add_train_flags(s)
    _add_common(s)
    s.set_defaults(func=cmd_sweep)

    h = sub.add_parser("thresholds", help="regenerate the per-cell success thresholds",
                       epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    h.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    h.add_argument("--fast", action="store_true", help=f"use {FAST_N} samples instead of {FULL_N}")
    h.add_argument("--n", type=int, default=None, help="sample count (overrides --fast)")
    h.add_argument("--perturb", choices=PERTURB_MODES, default=PERTURB_ALL)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--ops", default=",".join(OPERATIONS))
    h.add_argument("--ranges", default=None)
    h.add_argument("--out", default=None)
    _add_common(h)
    h.set_defaults(func=cmd_thresholds)

    la = sub.add_parser("landscape", help="grid-scan the training loss",
                        epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    la.add_argument("--op", default="add")
    la.add_argument("--range", default=None, help="range name (default: pos)")
    la.add_argument("--axis", action="append",
                    help=f"name:lo:hi:steps, name one of {', '.join(AXES)}; repeat for 2-D")
    la.add_argument("--preset", choices=("saddle",), default=None,
                    help="saddle: subtraction surface over O[1] x gate_value, O unfrozen")
    la.add_argument("--steps", type=int, default=51, help="grid steps per axis for --preset")
    la.add_argument("--gate-value", dest="gate_value", type=float, default=1.0)
    la.add_argument("--seed", type=int, default=0)
    la.add_argument("--batch-size", dest="batch_size", type=int, default=2048)
    la.add_argument("--name", default=None, help="output file stem")
    la.add_argument("--out", default=None)
    _add_common(la)
    la.set_defaults(func=cmd_landscape)

    d = sub.add_parser("dag", help="compile, run or check stacked-DMU programs")
    dsub = d.add_subparsers(dest="dag_cmd", required=True, parser_class=_Parser)
    dc = dsub.add_parser("compile")
    dc.add_argument("expr")
    dc.add_argument("--out", default=None, help="also write the program to this file")
    dr = dsub.add_parser("run")
    dr.add_argument("program", help="program file as printed by 'dag compile'")
    dr.add_argument("--values", required=True, help="comma-separated initial values")
    dk = dsub.add_parser("check")
    dk.add_argument("expr")
    dk.add_argument("--trials", type=int, default=1000)
    dk.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_dag)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, TaskError, DmuError, ValueError, OSError) as exc:
        print(f"dmu {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
