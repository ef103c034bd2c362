"""Grid scans of the training loss over one or two DMU parameters.

Axes are ``gate_value`` (G_lin directly, endpoints included), ``gate_raw``
(logistic logit), ``O[0]`` and ``O[1]``. Every grid point is evaluated on the
same fixed batch, and rows are emitted row-major (axis 1 outer).
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import DmuError, DmuParams, decompose, mix_step, nalm_params
from .reference import UNIT_FOR_OP
from .tasks import RangeSpec, TaskSpec, get_range, sample_batch

AXES = ("gate_value", "gate_raw", "O[0]", "O[1]")
DEFAULT_BATCH = 2048


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.name not in AXES:
            raise DmuError(f"unknown axis {self.name!r}; valid: {', '.join(AXES)}")
        if self.steps < 2:
            raise DmuError("axis needs at least 2 steps")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DmuError("axis bounds must be finite")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ScanSpec:
    operation: str
    range: RangeSpec | str
    axis1: Axis
    axis2: Axis | None = None
    base: DmuParams | None = None
    gate_value: float = 1.0
    seed: int = 0
    batch_size: int = DEFAULT_BATCH
    note: str = ""

    def resolved_range(self) -> RangeSpec:
        return get_range(self.range) if isinstance(self.range, str) else self.range

    def base_params(self) -> DmuParams:
        if self.base is not None:
            return self.base
        return nalm_params(UNIT_FOR_OP[self.operation])


@dataclass
class ScanResult:
    spec: ScanSpec
    x: np.ndarray
    y: np.ndarray | None
    loss: np.ndarray  # shape (len(x),) or (len(x), len(y))
    meta: dict = field(default_factory=dict)

    def rows(self):
        if self.y is None:
            return [(float(a), float(v)) for a, v in zip(self.x, self.loss)]
        return [
            (float(a), float(b), float(self.loss[i, j]))
            for i, a in enumerate(self.x)
            for j, b in enumerate(self.y)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "loss"] if self.y is None else ["x", "y", "loss"])
        for row in self.rows():
            w.writerow([repr(v) for v in row])
        return buf.getvalue()

    def metadata_json(self) -> str:
        return json.dumps(self.meta, indent=2, sort_keys=True)


def _point_loss(params: DmuParams, g_lin: float, O, mags, signs, target) -> float:
    tr = mix_step(
        mags, signs, O, g_lin, 1.0 - g_lin,
        sign_temperature=params.sign_temperature,
        mag_min=params.mag_min,
        log_lim=params.log_lim,
    )
    r = tr.y_final - target
    return float(np.mean(r * r))


def _settings(spec: ScanSpec, params: DmuParams, assign: dict[str, float]):
    g_lin = spec.gate_value
    O = np.array(params.operand_selector, dtype=np.float64)
    for name, v in assign.items():
        if name == "gate_value":
            g_lin = v
        elif name == "gate_raw":
            g_lin = float(expit(v / params.gate_temperature))
        elif name == "O[0]":
            O[0] = v
        elif name == "O[1]":
            O[1] = v
    return g_lin, O


def _scan_row(args):
    spec, params, xv, ys, mags, signs, target = args
    out = []
    for yv in ys:
        assign = {spec.axis1.name: xv}
        if spec.axis2 is not None:
            assign[spec.axis2.name] = yv
        g_lin, O = _settings(spec, params, assign)
        out.append(_point_loss(params, g_lin, O, mags, signs, target))
    return out


def scan(spec: ScanSpec, jobs: int = 1) -> ScanResult:
    rng = spec.resolved_range()
    params = spec.base_params()
    task = TaskSpec(spec.operation, rng, seed=spec.seed, batch_size=spec.batch_size)
    x_in, target = sample_batch(task, 0)
    mags, signs = decompose(x_in)
    xs = spec.axis1.values()
    ys = spec.axis2.values() if spec.axis2 is not None else [None]
    work = [(spec, params, float(xv), ys, mags, signs, target) for xv in xs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            grid = list(pool.map(_scan_row, work))
    else:
        grid = [_scan_row(w) for w in work]
    loss = np.array(grid)
    if spec.axis2 is None:
        loss = loss[:, 0]
    meta = {
        "operation": spec.operation,
        "range": rng.name,
        "range_interval": rng.label,
        "axis1": {"name": spec.axis1.name, "lo": spec.axis1.lo, "hi": spec.axis1.hi,
                  "steps": spec.axis1.steps},
        "axis2": None if spec.axis2 is None else {
            "name": spec.axis2.name, "lo": spec.axis2.lo, "hi": spec.axis2.hi,
            "steps": spec.axis2.steps},
        "operand_selector": list(params.operand_selector),
        "gate_value": spec.gate_value,
        "batch_size": spec.batch_size,
        "seed": spec.seed,
        "loss": "mean squared error on one fixed training batch",
    }
    if spec.note:
        meta["note"] = spec.note
    return ScanResult(spec, xs, None if spec.axis2 is None else np.asarray(ys), loss, meta)


def unimodality_check(losses) -> tuple[bool, int]:
    """``(is_unimodal, argmin)`` for a 1-D sequence.

    Weakly unimodal means the nonzero first differences go from negative to
    positive at most once (flat runs are ignored).
    """
    losses = np.asarray(losses, dtype=np.float64)
    d = np.sign(np.diff(losses))
    d = d[d != 0]
    changes = int(np.count_nonzero(d[1:] != d[:-1]))
    ok = bool(changes == 0 or (changes == 1 and d[0] < 0))
    return ok, int(np.argmin(losses))


def misleading_slopes(result: ScanResult, axis_name: str = "O[1]", correct: float = -1.0):
    """Grid points where descending along ``axis_name`` moves away from ``correct``.

    Uses forward differences; returns a list of ``(x, y)`` coordinates.
    """
    if result.y is None:
        raise DmuError("misleading_slopes needs a 2-D scan")
    spec = result.spec
    loss = result.loss
    if spec.axis1.name == axis_name:
        coord, other, grid = result.x, result.y, loss
    elif spec.axis2.name == axis_name:
        coord, other, grid = result.y, result.x, loss.T
    else:
        raise DmuError(f"{axis_name} is not a scan axis")
    hits = []
    for i in range(len(coord) - 1):
        for j in range(len(other)):
            slope = grid[i + 1, j] - grid[i, j]
            mid = 0.5 * (coord[i] + coord[i + 1])
            # downhill is +axis when slope < 0
            if (mid > correct and slope < 0) or (mid < correct and slope > 0):
                pt = (float(coord[i]), float(other[j]))
                hits.append(pt if spec.axis1.name == axis_name else pt[::-1])
    return hits


def subtraction_saddle_spec(steps: int = 51, range_name: str = "pos") -> ScanSpec:
    """The (O[1], gate_value) subtraction surface with O unfrozen."""
    base = nalm_params("DMU_sub")
    return ScanSpec(
        operation="sub",
        range=range_name,
        axis1=Axis("O[1]", -2.0, 2.0, steps),
        axis2=Axis("gate_value", 0.0, 1.0, steps),
        base=DmuParams(
            operand_selector=base.operand_selector,
            sign_temperature=base.sign_temperature,
            operand_frozen=False,
        ),
        note="axes reconstructed: O[1] in [-2, 2] against the gate value, with O[0] fixed at 1",
    )
