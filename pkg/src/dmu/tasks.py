"""Deterministic NALM single-operation task generator.

Each task draws 2-vectors uniformly from a named range and applies one of
``add``, ``sub``, ``mul``, ``div``. Randomness comes from numpy's PCG64DXSM
bit generator keyed by a :class:`numpy.random.SeedSequence` built from
``(seed, stream, step)``, so every batch is a pure function of its key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

OPERATIONS = ("add", "sub", "mul", "div")
OP_FUNCS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}
OP_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
DIV_GUARD = 1e-9

_TRAIN_STREAM = 0
_EXTRA_STREAM = 1


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class RangeSpec:
    name: str
    lo: float
    hi: float
    # extrapolation support: one or more half-open intervals
    extrapolation: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise TaskError(f"range {self.name}: lo must be < hi")
        if not self.extrapolation:
            raise TaskError(f"range {self.name}: no extrapolation interval")
        for a, b in self.extrapolation:
            if not a < b:
                raise TaskError(f"range {self.name}: bad extrapolation interval [{a}, {b})")

    @property
    def label(self) -> str:
        return f"U[{_fmt(self.lo)}, {_fmt(self.hi)})"

    @property
    def extrapolation_label(self) -> str:
        return " u ".join(f"U[{_fmt(a)}, {_fmt(b)})" for a, b in self.extrapolation)


def _fmt(v: float) -> str:
    return f"{v:g}"


@dataclass(frozen=True)
class TaskSpec:
    operation: str
    range: RangeSpec
    seed: int = 0
    batch_size: int = 128

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise TaskError(
                f"unknown operation {self.operation!r}; valid: {', '.join(OPERATIONS)}"
            )
        if self.batch_size < 1:
            raise TaskError("batch_size must be >= 1")
        if self.seed < 0:
            raise TaskError("seed must be non-negative")


def parse_range_table(text: str) -> list[RangeSpec]:
    """Parse the plain-text range table (see ``ranges.txt``)."""
    ranges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 5 or (len(parts) - 3) % 2:
            raise TaskError(f"line {lineno}: expected name lo hi extra_lo extra_hi [...]")
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise TaskError(f"line {lineno}: {exc}") from None
        extra = tuple(zip(vals[2::2], vals[3::2]))
        ranges.append(RangeSpec(parts[0], vals[0], vals[1], extra))
    names = [r.name for r in ranges]
    if len(set(names)) != len(names):
        raise TaskError("duplicate range names")
    return ranges


def load_range_table(path: str | Path | None = None) -> list[RangeSpec]:
    if path is None:
        text = resources.files("dmu").joinpath("ranges.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_range_table(text)


def builtin_ranges() -> list[RangeSpec]:
    return load_range_table()


def get_range(name: str, table: list[RangeSpec] | None = None) -> RangeSpec:
    table = builtin_ranges() if table is None else table
    for r in table:
        if r.name == name:
            return r
    raise TaskError(f"unknown range {name!r}; valid: {', '.join(r.name for r in table)}")


def make_rng(seed: int, stream: int, step: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64DXSM(np.random.SeedSequence([seed, stream, step])))


def _uniform_union(rng: np.random.Generator, intervals, shape) -> np.ndarray:
    lo = np.array([a for a, _ in intervals])
    length = np.array([b - a for a, b in intervals])
    cum = np.concatenate([[0.0], np.cumsum(length)])
    u = rng.random(shape) * cum[-1]
    k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(intervals) - 1)
    x = lo[k] + (u - cum[k])
    # guard against rounding onto the open upper edge
    hi = lo[k] + length[k]
    return np.where(x >= hi, np.nextafter(hi, -np.inf), x)


def _draw(rng, intervals, operation: str, count: int) -> tuple[np.ndarray, np.ndarray]:
    x = _uniform_union(rng, intervals, (count, 2))
    if operation == "div":
        bad = np.abs(x[:, 1]) < DIV_GUARD
        while bad.any():
            x[bad, 1] = _uniform_union(rng, intervals, int(bad.sum()))
            bad = np.abs(x[:, 1]) < DIV_GUARD
    return x, apply_op(operation, x)


def apply_op(operation: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return OP_FUNCS[operation](x[..., 0], x[..., 1])


def sample_batch(task: TaskSpec, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Training batch for ``step``; a pure function of ``(task.seed, step)``."""
    rng = make_rng(task.seed, _TRAIN_STREAM, step)
    return _draw(rng, ((task.range.lo, task.range.hi),), task.operation, task.batch_size)


def iter_extrapolation(
    task: TaskSpec, count: int, chunk: int = 100_000
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield extrapolation examples in chunks from one deterministic stream."""
    if count < 1:
        raise TaskError("count must be >= 1")
    rng = make_rng(task.seed, _EXTRA_STREAM)
    done = 0
    while done < count:
        n = min(chunk, count - done)
        yield _draw(rng, task.range.extrapolation, task.operation, n)
        done += n


def extrapolation_batch(task: TaskSpec, count: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = zip(*iter_extrapolation(task, count))
    return np.concatenate(xs), np.concatenate(ys)


def streaming_mse(
    predict: Callable[[np.ndarray], np.ndarray],
    task: TaskSpec,
    count: int,
    chunk: int = 100_000,
) -> float:
    """Mean squared error over ``count`` extrapolation examples.

    Per-chunk sums are pairwise (numpy) and combined exactly with ``math.fsum``.
    """
    partial = []
    for x, y in iter_extrapolation(task, count, chunk):
        r = predict(x) - y
        partial.append(float(np.sum(r * r)))
    return math.fsum(partial) / count
