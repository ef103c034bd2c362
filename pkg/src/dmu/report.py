"""CSV, Markdown and manifest writers for sweeps and thresholds."""

from __future__ import annotations

import csv
import io
import json
import os
import subprocess
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, reference
from .tasks import OPERATIONS, RangeSpec
from .thresholds import ThresholdRecord
from .trainer import CSV_FIELDS, ExperimentRecord, OpSummary

RECORD_COLUMNS = CSV_FIELDS


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: list[ExperimentRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        d = r.as_dict()
        w.writerow([fmt(d[c]) for c in RECORD_COLUMNS])
    return buf.getvalue()


def _sci(v: float) -> str:
    return "n/a" if v != v else f"{v:.2g}".replace("e-0", "e-")


def summary_markdown(summary: dict[str, OpSummary], ranges: list[RangeSpec]) -> str:
    """Performance table plus one success-rate table per operation.

    DMU columns are measured; baseline columns are published reference values.
    """
    out = ["## DMU performance", ""]
    out.append("| Operation | Mean Conv. Step | Mean Sparsity* | Mean Extrapolation Error | Converged |")
    out.append("|---|---:|---:|---:|---:|")
    for op, s in summary.items():
        out.append(
            f"| {op.upper()} | {s.mean_convergence_step:.0f} | {_sci(s.mean_sparsity)} | "
            f"{_sci(s.mean_extrapolation_error)} | {s.converged}/{s.runs} |"
        )
    out += [
        "",
        "*Sparsity here is min(G_lin, 1 - G_lin) at the end of training (local definition).",
        "",
    ]
    names = {r.name: r for r in ranges}
    for op in OPERATIONS:
        if op not in summary:
            continue
        s = summary[op]
        unit = reference.UNIT_FOR_OP[op]
        baselines = reference.BASELINES[op]
        out.append(f"## {op.upper()} success rates (%)")
        out.append("")
        out.append("| Range | " + " | ".join([unit] + [f"{b} (published)" for b in baselines]) + " |")
        out.append("|---|" + "---:|" * (1 + len(baselines)))
        for name, pct in s.success.items():
            label = names[name].label if name in names else name
            cited = []
            for b, vals in baselines.items():
                if name in reference.RANGE_ORDER:
                    cited.append(f"{vals[reference.RANGE_ORDER.index(name)]}%")
                else:
                    cited.append("-")
            out.append(f"| {label} | {pct:.0f}% | " + " | ".join(cited) + " |")
        out.append("")
    return "\n".join(out)


def threshold_markdown(records: list[ThresholdRecord]) -> str:
    """Regenerated thresholds next to the published ones, with their ratio."""
    out = ["| Range | Op | Threshold | Published | Ratio |", "|---|---|---:|---:|---:|"]
    for r in records:
        if r.range_name in reference.THRESHOLDS:
            p = reference.published_threshold(r.operation, r.range_name)
            out.append(
                f"| {r.range_name} | {r.operation} | {r.threshold:.3g} | {p:.3g} | {r.threshold / p:.2f} |"
            )
        else:
            out.append(f"| {r.range_name} | {r.operation} | {r.threshold:.3g} | - | - |")
    return "\n".join(out) + "\n"


def tool_version() -> str:
    """Package version, plus ``git describe`` when run from a checkout."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_atomic(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_manifest(path: str | Path, subcommand: str, config: dict, base_seed: int,
                   started: str, outputs: list[str | Path], **extra) -> Path:
    missing = [str(p) for p in outputs if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"manifest names missing outputs: {missing}")
    doc = {
        "subcommand": subcommand,
        "config": config,
        "base_seed": base_seed,
        "version": tool_version(),
        "started": started,
        "finished": now_iso(),
        "outputs": [str(p) for p in outputs],
        **extra,
    }
    return write_atomic(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
