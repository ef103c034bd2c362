"""Stacked DMU steps over a growing working state, and an expression compiler.

A program with ``k`` initial values and ``N`` steps keeps ``M = k + N``
slots of magnitude and sign. Step ``n`` reads slots ``0 .. k+n-1`` through
its selector row, mixes the linear and log results with its gate value
(1 = linear, 0 = log), and writes magnitude ``exp(M_log)`` and the mixed
sign into slot ``k + n``.

Expressions use variables and binary ``+ - * /`` with parentheses::

    >>> prog = compile_expression("(a+b)/(c*d)")
    >>> round(float(execute(prog, [2, 4, 3, 1])), 9)
    2.0
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_SIGN_TEMPERATURE, DmuError, ForwardTrace, decompose, mix_step
from .grad import step_backward


class DagError(DmuError):
    pass


class DagSyntaxError(DagError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class DagStep:
    selector: tuple[float, ...]
    gate: float


@dataclass(frozen=True)
class DagProgram:
    num_initial_values: int
    steps: tuple[DagStep, ...]
    selection: int | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        k, M = self.num_initial_values, self.width
        if k < 1:
            raise DagError("num_initial_values must be >= 1")
        if not self.steps:
            raise DagError("program depth must be >= 1")
        if self.names and len(self.names) != k:
            raise DagError(f"{len(self.names)} names for {k} initial values")
        for n, st in enumerate(self.steps):
            if len(st.selector) != M:
                raise DagError(f"step {n}: selector length {len(st.selector)} != M = {M}")
            if any(v != 0 for v in st.selector[k + n :]):
                raise DagError(f"step {n}: selector reads slot >= {k + n} (causal mask)")
            if not 0.0 <= st.gate <= 1.0:
                raise DagError(f"step {n}: gate {st.gate!r} outside [0, 1]")
        if not 0 <= self.select_index < M:
            raise DagError(f"selection {self.selection} outside [0, {M})")

    @property
    def depth(self) -> int:
        return len(self.steps)

    @property
    def width(self) -> int:
        return self.num_initial_values + len(self.steps)

    @property
    def select_index(self) -> int:
        return self.width - 1 if self.selection is None else self.selection

    def selector_matrix(self) -> np.ndarray:
        return np.array([s.selector for s in self.steps], dtype=np.float64)

    def gates(self) -> np.ndarray:
        return np.array([s.gate for s in self.steps], dtype=np.float64)

    def with_params(self, selectors, gates) -> "DagProgram":
        steps = tuple(
            DagStep(tuple(float(v) for v in row), float(g)) for row, g in zip(selectors, gates)
        )
        return DagProgram(self.num_initial_values, steps, self.selection, self.names)


@dataclass
class DagTrace:
    working_mag: np.ndarray
    working_sign: np.ndarray
    steps: list[ForwardTrace] = field(default_factory=list)
    output: np.ndarray | None = None


def run(
    program: DagProgram,
    initial_values,
    sign_temperature: float = DEFAULT_SIGN_TEMPERATURE,
    mag_min: float = 1e-12,
    log_lim: float = 30.0,
) -> DagTrace:
    """Execute ``program``; ``initial_values`` is ``(k,)`` or ``(batch, k)``."""
    x = np.asarray(initial_values, dtype=np.float64)
    k = program.num_initial_values
    if x.shape[-1] != k:
        raise DagError(f"expected {k} initial values, got {x.shape[-1]}")
    mags, signs = decompose(x)
    shape = x.shape[:-1] + (program.width,)
    wmag = np.zeros(shape)
    wsign = np.ones(shape)
    wmag[..., :k] = mags
    wsign[..., :k] = signs
    trace = DagTrace(wmag, wsign)
    for n, st in enumerate(program.steps):
        tr = mix_step(
            wmag, wsign, st.selector, st.gate, 1.0 - st.gate,
            sign_temperature=sign_temperature, mag_min=mag_min, log_lim=log_lim,
        )
        # slots are written once; steps see the state as it was when they ran
        wmag = wmag.copy()
        wsign = wsign.copy()
        wmag[..., k + n] = tr.m_final
        wsign[..., k + n] = tr.s_mix
        trace.steps.append(tr)
    trace.working_mag, trace.working_sign = wmag, wsign
    sel = program.select_index
    trace.output = wmag[..., sel] * wsign[..., sel]
    return trace


def execute(program: DagProgram, initial_values, **kwargs) -> np.ndarray:
    return run(program, initial_values, **kwargs).output


def backward(
    program: DagProgram,
    trace: DagTrace,
    d_output,
    sign_temperature: float = DEFAULT_SIGN_TEMPERATURE,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(d_output * output)`` w.r.t. selector rows and gate values."""
    k, N = program.num_initial_values, program.depth
    d_out = np.broadcast_to(np.asarray(d_output, dtype=np.float64), trace.output.shape)
    sel = program.select_index
    d_mag = np.zeros_like(trace.working_mag)
    d_sign = np.zeros_like(trace.working_sign)
    d_mag[..., sel] += d_out * trace.working_sign[..., sel]
    d_sign[..., sel] += d_out * trace.working_mag[..., sel]
    d_sel = np.zeros((N, program.width))
    d_gate = np.zeros(N)
    for n in reversed(range(N)):
        slot = k + n
        sg = step_backward(
            trace.steps[n],
            0.0,
            sign_temperature,
            d_m_final=d_mag[..., slot],
            d_s_mix=d_sign[..., slot],
        )
        d_sel[n] = sg.d_operand_selector
        d_gate[n] = sg.d_g_lin - sg.d_g_log
        d_mag += sg.d_mags
        d_sign += sg.d_signs
    return d_sel, d_gate


# --- expression compiler -------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([-+*/()])|(\S))")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Var | BinOp"
    right: "Var | BinOp"


def tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        if m.group(3) is not None:
            ch = m.group(3)
            where = m.start(3)
            if ch.isdigit() or ch == ".":
                raise DagSyntaxError("numeric literals are not supported", where)
            raise DagSyntaxError(f"unexpected character {ch!r}", where)
        tok = m.group(1) or m.group(2)
        tokens.append((tok, m.start(1) if m.group(1) else m.start(2)))
        pos = m.end()
    return tokens


class _Parser:
    # expr   := term (("+" | "-") term)*
    # term   := factor (("*" | "/") factor)*
    # factor := NAME | "(" expr ")"

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)

    def take(self):
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def parse(self):
        if not self.tokens:
            raise DagSyntaxError("empty expression", 0)
        node = self.expr()
        if self.peek() is not None:
            raise DagSyntaxError(f"unexpected {self.peek()!r}", self.pos())
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        tok = self.peek()
        if tok is None:
            raise DagSyntaxError("unexpected end of expression", self.pos())
        if tok == "(":
            self.take()
            node = self.expr()
            if self.peek() != ")":
                raise DagSyntaxError("expected ')'", self.pos())
            self.take()
            return node
        if tok in ("+", "-"):
            raise DagSyntaxError("unary operators are not supported", self.pos())
        if tok in ("*", "/", ")"):
            raise DagSyntaxError(f"unexpected {tok!r}", self.pos())
        self.take()
        return Var(tok)


def parse(text: str):
    return _Parser(text).parse()


def variables(node) -> list[str]:
    """Variable names in first-appearance order."""
    seen: dict[str, None] = {}

    def walk(n):
        if isinstance(n, Var):
            seen.setdefault(n.name)
        else:
            walk(n.left)
            walk(n.right)

    walk(node)
    return list(seen)


def count_ops(node) -> int:
    return 0 if isinstance(node, Var) else 1 + count_ops(node.left) + count_ops(node.right)


def compile_expression(text: str) -> DagProgram:
    """Compile an expression into a program, one step per operator (post-order)."""
    tree = parse(text)
    if isinstance(tree, Var):
        raise DagError("expression has no operators; program depth must be >= 1")
    names = variables(tree)
    k = len(names)
    M = k + count_ops(tree)
    slot_of = {name: i for i, name in enumerate(names)}
    steps: list[DagStep] = []

    def emit(node) -> int:
        if isinstance(node, Var):
            return slot_of[node.name]
        left = emit(node.left)
        right = emit(node.right)
        row = [0.0] * M
        row[left] += 1.0
        row[right] += -1.0 if node.op in ("-", "/") else 1.0
        steps.append(DagStep(tuple(row), 1.0 if node.op in ("+", "-") else 0.0))
        return k + len(steps) - 1

    emit(tree)
    return DagProgram(k, tuple(steps), names=tuple(names))


def evaluate(node, env: dict[str, np.ndarray]) -> np.ndarray:
    """Direct float64 evaluation of a parsed expression."""
    if isinstance(node, Var):
        return env[node.name]
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    return {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[node.op](a, b)


def differential_test(
    expression: str,
    trials: int = 1000,
    seed: int = 0,
    lo: float = 1.0,
    hi: float = 2.0,
    **kwargs,
) -> float:
    """Worst relative error of the compiled program against direct evaluation.

    Inputs are drawn from U[lo, hi). Where the exact value is 0 the absolute
    error is used instead.
    """
    if trials < 1:
        raise DagError("trials must be >= 1")
    tree = parse(expression)
    prog = compile_expression(expression)
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(trials, prog.num_initial_values))
    want = evaluate(tree, {name: x[:, i] for i, name in enumerate(prog.names)})
    got = execute(prog, x, **kwargs)
    scale = np.where(want == 0, 1.0, np.abs(want))
    return float(np.max(np.abs(got - want) / scale))


def random_expression(
    rng: np.random.Generator,
    max_ops: int = 5,
    names: str = "abcde",
    lo: float = 1.0,
    hi: float = 2.0,
    min_gap: float = 0.05,
) -> str:
    """Random expression whose subexpressions stay >= ``min_gap`` on U[lo, hi) inputs.

    Subtraction is only emitted when interval arithmetic proves the
    difference positive with margin; otherwise it becomes addition.
    """

    def build(ops_left: int):
        if ops_left == 0:
            v = names[rng.integers(len(names))]
            return v, (lo, hi)
        n_left = int(rng.integers(ops_left))
        ls, (la, lb) = build(n_left)
        rs, (ra, rb) = build(ops_left - 1 - n_left)
        op = "+-*/"[rng.integers(4)]
        if op == "-" and la - rb < min_gap:
            op = "+"
        bound = {
            "+": (la + ra, lb + rb),
            "-": (la - rb, lb - ra),
            "*": (la * ra, lb * rb),
            "/": (la / rb, lb / ra),
        }[op]
        return f"({ls} {op} {rs})", bound

    n_ops = int(rng.integers(1, max_ops + 1))
    text, _ = build(n_ops)
    return text[1:-1]


# --- text format ---------------------------------------------------------


def _fmt(v: float) -> str:
    if v == 0 and math.copysign(1.0, v) < 0:
        return "-0"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_program(program: DagProgram) -> str:
    """Serialize in the ``n: [row] [G = g]`` layout."""
    names = program.names or tuple(f"x{i}" for i in range(program.num_initial_values))
    lines = ["working mag", ",".join(names), "    O               G"]
    for n, st in enumerate(program.steps):
        row = "[" + ",".join(_fmt(v) for v in st.selector) + "]"
        lines.append(f"{n}: {row}  [G = {_fmt(st.gate)}]")
    if program.selection is not None:
        lines.append(f"select: {program.selection}")
    return "\n".join(lines) + "\n"


_ROW = re.compile(r"^\s*(\d+)\s*:\s*\[([^\]]*)\]\s*\[\s*G\s*=\s*([^\]\s]+)\s*\]\s*$")


def parse_program(text: str) -> DagProgram:
    names: tuple[str, ...] = ()
    steps = []
    selection = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line == "working mag" or re.fullmatch(r"O\s+G", line):
            continue
        if line.startswith("select:"):
            selection = int(line.split(":", 1)[1])
            continue
        m = _ROW.match(line)
        if m:
            if int(m.group(1)) != len(steps):
                raise DagError(f"line {lineno}: step index {m.group(1)} out of order")
            row = tuple(float(v) for v in m.group(2).split(","))
            steps.append(DagStep(row, float(m.group(3))))
        elif not steps and not names:
            names = tuple(n.strip() for n in line.split(","))
        else:
            raise DagError(f"line {lineno}: cannot parse {raw!r}")
    if not steps:
        raise DagError("program has no steps")
    k = len(steps[0].selector) - len(steps)
    if names and len(names) != k:
        raise DagError(f"{len(names)} names but rows imply {k} initial values")
    return DagProgram(k, tuple(steps), selection, names)
