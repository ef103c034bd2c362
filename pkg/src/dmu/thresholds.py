"""Convergence thresholds by weight perturbation.

The optimal frozen-operand configuration for an operation is perturbed by
``epsilon`` and its mean squared extrapolation error becomes the success
threshold for that (operation, range) cell. Perturbations are applied to
gate VALUES, since a saturated logistic hides any change to its logit.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DmuError, DmuParams, decompose, gate_raw_for, mix_step, nalm_params
from .reference import UNIT_FOR_OP
from .tasks import OPERATIONS, RangeSpec, TaskSpec, builtin_ranges, get_range, iter_extrapolation

DEFAULT_EPSILON = 1e-5
FULL_N = 1_000_000
FAST_N = 100_000
SATURATION = 1e-13

# which weights get moved by +/- epsilon
PERTURB_GATE = "gate"  # the single gate value, moved into the simplex
PERTURB_GATE_PAIR = "gate-pair"  # g_lin and g_log independently
PERTURB_ALL = "all"  # g_lin, g_log and every operand-selector entry
PERTURB_MODES = (PERTURB_GATE, PERTURB_GATE_PAIR, PERTURB_ALL)

CSV_FIELDS = ("op", "range", "epsilon", "n", "threshold")


@dataclass(frozen=True)
class ThresholdRecord:
    operation: str
    range_name: str
    epsilon: float
    threshold: float
    n: int
    perturb: str = PERTURB_ALL


def is_linear_op(operation: str) -> bool:
    return operation in ("add", "sub")


def optimal_params(operation: str, preset: str | None = None, **kwargs) -> DmuParams:
    """Optimal frozen-operand parameters for ``operation``.

    The gate sits within ``1e-13`` of pure linear (add, sub) or pure log
    (mul, div).
    """
    if operation not in OPERATIONS:
        raise DmuError(f"unknown operation {operation!r}; valid: {', '.join(OPERATIONS)}")
    preset = preset or UNIT_FOR_OP[operation]
    params = nalm_params(preset, **kwargs)
    g_lin = 1.0 - SATURATION if is_linear_op(operation) else SATURATION
    return params.with_gate_value(g_lin)


def _candidates(operation: str, params: DmuParams, epsilon: float, perturb: str):
    """Perturbed ``(selector, g_lin, g_log)`` triples to evaluate."""
    O = np.asarray(params.operand_selector)
    lin = is_linear_op(operation)
    g_lin, g_log = (1.0, 0.0) if lin else (0.0, 1.0)
    if perturb == PERTURB_GATE:
        g = g_lin - epsilon if lin else g_lin + epsilon
        return [(O, g, 1.0 - g)]
    signs = list(itertools.product((1.0, -1.0), repeat=2))
    if perturb == PERTURB_GATE_PAIR:
        return [(O, g_lin + a * epsilon, g_log + b * epsilon) for a, b in signs]
    if perturb == PERTURB_ALL:
        out = []
        for a, b in signs:
            for so in itertools.product((1.0, -1.0), repeat=O.size):
                out.append((O + epsilon * np.array(so), g_lin + a * epsilon, g_log + b * epsilon))
        return out
    raise DmuError(f"unknown perturbation mode {perturb!r}; valid: {', '.join(PERTURB_MODES)}")


def compute_threshold(
    operation: str,
    range_spec: RangeSpec | str,
    epsilon: float = DEFAULT_EPSILON,
    n: int = FULL_N,
    seed: int = 0,
    perturb: str = PERTURB_ALL,
    params: DmuParams | None = None,
) -> ThresholdRecord:
    """Worst-case extrapolation MSE over all +/-epsilon perturbations.

    Every candidate is evaluated on the same ``n`` extrapolation examples;
    per-chunk sums are combined with ``math.fsum``.
    """
    if epsilon < 0:
        raise DmuError("epsilon must be >= 0")
    if n < 1:
        raise DmuError("n must be >= 1")
    if isinstance(range_spec, str):
        range_spec = get_range(range_spec)
    params = params or optimal_params(operation)
    task = TaskSpec(operation, range_spec, seed=seed)
    cands = _candidates(operation, params, epsilon, perturb)
    sums: list[list[float]] = [[] for _ in cands]
    for x, y in iter_extrapolation(task, n):
        mags, signs = decompose(x)
        for acc, (O, gl, gg) in zip(sums, cands):
            tr = mix_step(
                mags,
                signs,
                O,
                gl,
                gg,
                sign_temperature=params.sign_temperature,
                mag_min=params.mag_min,
                log_lim=params.log_lim,
            )
            r = tr.y_final - y
            acc.append(float(np.sum(r * r)))
    threshold = max(math.fsum(acc) / n for acc in sums)
    return ThresholdRecord(operation, range_spec.name, float(epsilon), threshold, n, perturb)


def _threshold_job(args):
    return compute_threshold(*args)


def threshold_table(
    operations=OPERATIONS,
    ranges: list[RangeSpec] | None = None,
    epsilon: float = DEFAULT_EPSILON,
    n: int = FULL_N,
    seed: int = 0,
    perturb: str = PERTURB_ALL,
    jobs: int = 1,
) -> list[ThresholdRecord]:
    ranges = builtin_ranges() if ranges is None else ranges
    work = [(op, r, epsilon, n, seed, perturb) for op in operations for r in ranges]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_threshold_job, work))
    return [_threshold_job(w) for w in work]


def records_to_csv(records: list[ThresholdRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([r.operation, r.range_name, repr(r.epsilon), r.n, repr(r.threshold)])
    return buf.getvalue()


def read_threshold_csv(path: str | Path) -> dict[tuple[str, str], float]:
    """Load ``{(op, range): threshold}`` from a thresholds CSV."""
    with open(path, newline="") as fh:
        return {(row["op"], row["range"]): float(row["threshold"]) for row in csv.DictReader(fh)}
