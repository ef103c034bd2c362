"""Single-task training runs and seed sweeps for the frozen-operand DMU.

Only the gate is learned. Each run draws training batches from the task's
range, updates the raw gate with Adam, and every ``eval_interval`` steps
compares the MSE on a fixed extrapolation set against the cell's threshold.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import (
    DEFAULT_GATE_TEMPERATURE,
    DEFAULT_SIGN_TEMPERATURE,
    GATE_SOFTMAX,
    DmuParams,
    decompose,
    gate_pair,
    mix_step,
    nalm_params,
)
from .grad import loss_and_grad
from .reference import UNIT_FOR_OP
from .tasks import (
    OPERATIONS,
    RangeSpec,
    TaskSpec,
    builtin_ranges,
    extrapolation_batch,
    sample_batch,
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_steps: int = 50_000
    # extra steps after the first threshold crossing; the final error is read after them
    post_convergence_steps: int = 1_000
    eval_interval: int = 10
    eval_size: int = 10_000
    init_gate: float = 0.5
    sign_temperature: float = DEFAULT_SIGN_TEMPERATURE
    gate_temperature: float = DEFAULT_GATE_TEMPERATURE
    gate_mode: str = GATE_SOFTMAX

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.post_convergence_steps < 0:
            raise ValueError("post_convergence_steps must be >= 0")
        if not 0.0 < self.init_gate < 1.0:
            raise ValueError("init_gate must be in (0, 1)")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: float | np.ndarray = 0.0
    v: float | np.ndarray = 0.0
    t: int = 0

    def step(self, param, grad):
        """Return the updated parameter (scalar or array)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class ExperimentRecord:
    operation: str
    range_name: str
    seed: int
    converged: bool
    convergence_step: int | None
    extrapolation_error: float
    sparsity: float
    final_gate: float
    steps_run: int
    wall_time: float
    lr: float
    threshold: float
    error: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


# wall_time is left out so reruns give byte-identical CSV
CSV_FIELDS = (
    "operation",
    "range_name",
    "seed",
    "converged",
    "convergence_step",
    "extrapolation_error",
    "sparsity",
    "final_gate",
    "steps_run",
    "lr",
    "threshold",
    "error",
)


def sparsity(g_lin: float) -> float:
    """Distance of the gate from a discrete domain choice (0 = fully discrete)."""
    return min(g_lin, 1.0 - g_lin)


def _mse(params: DmuParams, mags, signs, target) -> float:
    g = gate_pair(params)
    tr = mix_step(
        mags,
        signs,
        params.operand_selector,
        g.g_lin,
        g.g_log,
        sign_temperature=params.sign_temperature,
        mag_min=params.mag_min,
        log_lim=params.log_lim,
    )
    r = tr.y_final - target
    return float(np.mean(r * r))


def train_one(
    task: TaskSpec,
    config: TrainConfig,
    threshold: float,
    preset: str | None = None,
) -> ExperimentRecord:
    preset = preset or UNIT_FOR_OP[task.operation]
    if preset != UNIT_FOR_OP[task.operation]:
        raise ValueError(
            f"{task.operation} is trained with {UNIT_FOR_OP[task.operation]}, not {preset}"
        )
    task = replace(task, batch_size=config.batch_size)
    params = nalm_params(
        preset,
        g_lin=config.init_gate,
        sign_temperature=config.sign_temperature,
        gate_temperature=config.gate_temperature,
        gate_mode=config.gate_mode,
    )
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    x_eval, y_eval = extrapolation_batch(task, config.eval_size)
    eval_mags, eval_signs = decompose(x_eval)

    start = time.perf_counter()
    converged_at = None
    err = None
    extra = math.inf
    step = 0
    stop_at = config.max_steps
    while step < stop_at:
        step += 1
        x, y = sample_batch(task, step)
        loss, grads = loss_and_grad(params, x, y)
        if not (math.isfinite(loss) and np.all(np.isfinite(grads.d_gate_raw))):
            err = f"non-finite loss/gradient at step {step}: loss={loss!r}"
            break
        raw = opt.step(np.asarray(params.gate_raw), grads.d_gate_raw)
        params = replace(params, gate_raw=float(raw) if raw.ndim == 0 else tuple(raw))
        if converged_at is None and step % config.eval_interval == 0:
            extra = _mse(params, eval_mags, eval_signs, y_eval)
            if extra < threshold:
                converged_at = step
                stop_at = step + config.post_convergence_steps
    if err is None:
        extra = _mse(params, eval_mags, eval_signs, y_eval)
    g = gate_pair(params).g_lin
    return ExperimentRecord(
        operation=task.operation,
        range_name=task.range.name,
        seed=task.seed,
        converged=converged_at is not None,
        convergence_step=converged_at,
        extrapolation_error=extra,
        sparsity=sparsity(g),
        final_gate=g,
        steps_run=step,
        wall_time=time.perf_counter() - start,
        lr=config.lr,
        threshold=threshold,
        error=err,
    )


def _run(args) -> ExperimentRecord:
    task, config, threshold = args
    try:
        return train_one(task, config, threshold)
    except Exception as exc:  # recorded, the sweep keeps going
        return ExperimentRecord(
            task.operation, task.range.name, task.seed, False, None, math.nan, math.nan,
            math.nan, 0, 0.0, config.lr, threshold, error=f"{type(exc).__name__}: {exc}",
        )


def sweep(
    operations=OPERATIONS,
    ranges: list[RangeSpec] | None = None,
    seeds: int = 25,
    config: TrainConfig | None = None,
    thresholds: dict[tuple[str, str], float] | None = None,
    base_seed: int = 0,
    jobs: int = 1,
) -> list[ExperimentRecord]:
    """Train every (operation, range, seed) cell.

    ``thresholds`` maps ``(op, range_name)`` to the success threshold.
    Experiment ``i`` uses seed ``base_seed + i`` within its cell.
    """
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    if not operations:
        raise ValueError("no operations given")
    config = config or TrainConfig()
    ranges = builtin_ranges() if ranges is None else ranges
    if thresholds is None:
        raise ValueError("thresholds are required")
    work = [
        (TaskSpec(op, r, seed=base_seed + i, batch_size=config.batch_size), config, thresholds[(op, r.name)])
        for op in operations
        for r in ranges
        for i in range(seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_run, work, chunksize=4))
    return [_run(w) for w in work]


@dataclass
class OpSummary:
    operation: str
    runs: int
    converged: int
    mean_convergence_step: float
    mean_sparsity: float
    mean_extrapolation_error: float
    success: dict[str, float] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return 100.0 * self.converged / self.runs


def summarize(records: list[ExperimentRecord]) -> dict[str, OpSummary]:
    """Per-op means over converged runs and per-(op, range) success percentages."""
    if not records:
        raise ValueError("no records to summarize")
    out = {}
    ops = [op for op in OPERATIONS if any(r.operation == op for r in records)]
    for op in ops:
        recs = [r for r in records if r.operation == op]
        ok = [r for r in recs if r.converged]

        def mean(vals):
            return math.fsum(vals) / len(vals) if vals else math.nan

        success = {}
        for name in dict.fromkeys(r.range_name for r in recs):
            cell = [r for r in recs if r.range_name == name]
            success[name] = 100.0 * sum(r.converged for r in cell) / len(cell)
        out[op] = OpSummary(
            operation=op,
            runs=len(recs),
            converged=len(ok),
            mean_convergence_step=mean([r.convergence_step for r in ok]),
            mean_sparsity=mean([r.sparsity for r in ok]),
            mean_extrapolation_error=mean([r.extrapolation_error for r in ok]),
            success=success,
        )
    return out
