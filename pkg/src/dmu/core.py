"""Domain Mixed Unit forward pass.

The unit computes ``O . x`` in linear space and ``O . log|x|`` in log
space, tracks signs on a separate path, and blends the two domains with a
gate. Everything is vectorised over a leading batch axis and runs in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit, softmax

SMOOTH_ABS_EPS = 1e-8
# tanh(y / T) must be +/-1 to within ~1e-5 for |y| >= 0.01 (narrow-range subtraction)
DEFAULT_SIGN_TEMPERATURE = 1e-3
DEFAULT_GATE_TEMPERATURE = 0.1

GATE_LOGISTIC = "logistic"
GATE_SOFTMAX = "softmax"

PRESETS = {
    "DMU_add": (1.0, 1.0),
    "DMU_sub": (1.0, -1.0),
}


class DmuError(ValueError):
    """Raised for invalid inputs or parameter combinations."""


@dataclass(frozen=True)
class DmuParams:
    operand_selector: tuple[float, ...] = (1.0, 1.0)
    # float for the logistic gate, (lin_logit, log_logit) for the softmax gate
    gate_raw: float | tuple[float, float] = 0.0
    sign_temperature: float = DEFAULT_SIGN_TEMPERATURE
    gate_temperature: float = DEFAULT_GATE_TEMPERATURE
    mag_min: float = 1e-12
    log_lim: float = 30.0
    operand_frozen: bool = True
    gate_mode: str = GATE_LOGISTIC
    smooth_abs_eps: float = field(default=SMOOTH_ABS_EPS, init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "operand_selector", tuple(float(v) for v in self.operand_selector)
        )
        for name in ("sign_temperature", "gate_temperature", "mag_min", "log_lim"):
            if not getattr(self, name) > 0:
                raise DmuError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.gate_mode == GATE_LOGISTIC:
            object.__setattr__(self, "gate_raw", float(self.gate_raw))
        elif self.gate_mode == GATE_SOFTMAX:
            raw = np.atleast_1d(np.asarray(self.gate_raw, dtype=np.float64))
            if raw.size == 1:
                # a scalar logit difference, split symmetrically
                raw = np.array([raw[0] / 2.0, -raw[0] / 2.0])
            raw = tuple(float(v) for v in raw)
            if len(raw) != 2:
                raise DmuError("softmax gate needs two logits (lin, log)")
            object.__setattr__(self, "gate_raw", raw)
        else:
            raise DmuError(f"unknown gate_mode {self.gate_mode!r}")
        if not self.operand_selector:
            raise DmuError("operand_selector must be non-empty")

    @property
    def width(self) -> int:
        return len(self.operand_selector)

    def gates(self) -> "GatePair":
        return gate_pair(self)

    def with_gate_value(self, g_lin: float) -> "DmuParams":
        """Return a copy whose gate evaluates to ``g_lin`` (inverse of the gate map)."""
        return replace(self, gate_raw=gate_raw_for(g_lin, self.gate_temperature, self.gate_mode))


@dataclass(frozen=True)
class GatePair:
    g_lin: float
    g_log: float


def gate_pair(params: DmuParams) -> GatePair:
    if params.gate_mode == GATE_LOGISTIC:
        g_lin = float(expit(params.gate_raw / params.gate_temperature))
    else:
        g_lin = float(softmax(np.asarray(params.gate_raw) / params.gate_temperature)[0])
    return GatePair(g_lin, 1.0 - g_lin)


def gate_raw_for(g_lin: float, gate_temperature: float = DEFAULT_GATE_TEMPERATURE, mode: str = GATE_LOGISTIC):
    """Raw gate parameter(s) producing ``g_lin``; ``g_lin`` must lie strictly in (0, 1)."""
    if not 0.0 < g_lin < 1.0:
        raise DmuError(f"gate value must be in (0, 1), got {g_lin!r}")
    z = float(gate_temperature * logit(g_lin))
    if mode == GATE_LOGISTIC:
        return z
    return (z / 2.0, -z / 2.0)


def nalm_params(preset: str, g_lin: float | None = None, **kwargs) -> DmuParams:
    """Frozen-operand NALM configuration (``DMU_add`` or ``DMU_sub``)."""
    if preset not in PRESETS:
        raise DmuError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    params = DmuParams(operand_selector=PRESETS[preset], operand_frozen=True, **kwargs)
    if g_lin is not None:
        params = params.with_gate_value(g_lin)
    return params


@dataclass
class ForwardTrace:
    """Every intermediate of one (batched) forward pass."""

    x_mag: np.ndarray
    x_sign: np.ndarray
    operand_selector: np.ndarray
    g_lin: float
    g_log: float
    y_lin: np.ndarray
    y_log: np.ndarray
    log_mag: np.ndarray
    s_lin: np.ndarray
    neg_count: np.ndarray
    s_log: np.ndarray
    s_mix: np.ndarray
    smooth_abs_value: np.ndarray
    y_lin_log: np.ndarray
    y_log_clamped: np.ndarray
    m_log_pre: np.ndarray
    m_log: np.ndarray
    m_final: np.ndarray
    y_final: np.ndarray
    # True where the clamp changed its argument
    clamp_mag: np.ndarray
    clamp_smooth_abs: np.ndarray
    clamp_y_log: np.ndarray
    clamp_m_log: np.ndarray
    params: DmuParams | None = None


def decompose(x) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` into magnitudes and signs, with sign(0) = +1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DmuError("input must have at least one component")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))
        raise DmuError(f"non-finite input at index {bad[0].tolist()}: {x[tuple(bad[0])]!r}")
    return np.abs(x), np.where(x < 0, -1.0, 1.0)


def domain_results(operand_selector, magnitudes, signs=None, mag_min: float = 1e-12):
    """Return ``(y_lin, y_log)`` for the selector applied in both domains.

    The linear result uses signed values when ``signs`` is given; the log
    result always uses magnitudes.
    """
    O = np.asarray(operand_selector, dtype=np.float64)
    mags = np.asarray(magnitudes, dtype=np.float64)
    signed = mags if signs is None else mags * np.asarray(signs, dtype=np.float64)
    log_mag = np.log(np.maximum(mags, mag_min))
    return signed @ O, log_mag @ O


def sign_linear(y_lin, temperature: float = DEFAULT_SIGN_TEMPERATURE):
    return np.tanh(np.asarray(y_lin, dtype=np.float64) / temperature)


def sign_log(signs, selector_mask=None):
    """cos(pi * number of negative selected inputs).

    Soft signs in [-1, 1] are accepted; the negative count is then fractional.
    A non-binary ``selector_mask`` weights each input's count (integer
    exponents keep the correct product sign).
    """
    signs = np.asarray(signs, dtype=np.float64)
    n = 0.5 * (1.0 - signs)
    if selector_mask is not None:
        n = n * np.asarray(selector_mask, dtype=np.float64)
    return np.cos(np.pi * n.sum(axis=-1))


def mix_step(
    mags,
    signs,
    operand_selector,
    g_lin: float,
    g_log: float,
    sign_temperature: float = DEFAULT_SIGN_TEMPERATURE,
    mag_min: float = 1e-12,
    log_lim: float = 30.0,
) -> ForwardTrace:
    """One mixing step over already-decomposed magnitudes and signs.

    ``g_lin`` and ``g_log`` are taken independently so callers may evaluate
    off-simplex gate values; the parameterised gate always sums to one.
    """
    mags = np.asarray(mags, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    O = np.asarray(operand_selector, dtype=np.float64)
    if mags.shape[-1] != O.shape[0]:
        raise DmuError(f"input width {mags.shape[-1]} != selector width {O.shape[0]}")

    clamp_mag = mags < mag_min
    log_mag = np.log(np.maximum(mags, mag_min))
    # linear path works on signed values, log path on magnitudes
    y_lin = (mags * signs) @ O
    y_log = log_mag @ O

    s_lin = np.tanh(y_lin / sign_temperature)
    # |O| weighting equals the nonzero-selector mask for O in {-1, 0, 1}
    neg_count = (0.5 * (1.0 - signs) * np.abs(O)).sum(axis=-1)
    s_log = np.cos(np.pi * neg_count)
    s_mix = g_lin * s_lin + g_log * s_log

    smooth_abs = np.sqrt(y_lin * y_lin + SMOOTH_ABS_EPS)
    clamp_smooth_abs = smooth_abs < mag_min
    y_lin_log = np.log(np.maximum(smooth_abs, mag_min))
    clamp_y_log = np.abs(y_log) > log_lim
    y_log_clamped = np.clip(y_log, -log_lim, log_lim)
    m_log_pre = g_lin * y_lin_log + g_log * y_log_clamped
    clamp_m_log = np.abs(m_log_pre) > log_lim
    m_log = np.clip(m_log_pre, -log_lim, log_lim)
    m_final = np.exp(m_log)
    y_final = s_mix * m_final

    return ForwardTrace(
        x_mag=mags,
        x_sign=signs,
        operand_selector=O,
        g_lin=g_lin,
        g_log=g_log,
        y_lin=y_lin,
        y_log=y_log,
        log_mag=log_mag,
        s_lin=s_lin,
        neg_count=neg_count,
        s_log=s_log,
        s_mix=s_mix,
        smooth_abs_value=smooth_abs,
        y_lin_log=y_lin_log,
        y_log_clamped=y_log_clamped,
        m_log_pre=m_log_pre,
        m_log=m_log,
        m_final=m_final,
        y_final=y_final,
        clamp_mag=clamp_mag,
        clamp_smooth_abs=clamp_smooth_abs,
        clamp_y_log=clamp_y_log,
        clamp_m_log=clamp_m_log,
    )


def mix_and_finalize(params: DmuParams, y_lin, y_log, s_lin, s_log) -> dict:
    """Blend precomputed domain results and signs; returns the tail of a trace."""
    g = gate_pair(params)
    L = params.log_lim
    y_lin = np.asarray(y_lin, dtype=np.float64)
    y_log = np.asarray(y_log, dtype=np.float64)
    s_mix = g.g_lin * np.asarray(s_lin) + g.g_log * np.asarray(s_log)
    smooth_abs = np.sqrt(y_lin * y_lin + SMOOTH_ABS_EPS)
    y_lin_log = np.log(np.maximum(smooth_abs, params.mag_min))
    y_log_clamped = np.clip(y_log, -L, L)
    m_log = np.clip(g.g_lin * y_lin_log + g.g_log * y_log_clamped, -L, L)
    m_final = np.exp(m_log)
    return {
        "s_mix": s_mix,
        "smooth_abs_value": smooth_abs,
        "y_lin_log": y_lin_log,
        "y_log_clamped": y_log_clamped,
        "m_log": m_log,
        "m_final": m_final,
        "y_final": s_mix * m_final,
    }


def forward(params: DmuParams, x) -> tuple[np.ndarray, ForwardTrace]:
    """Run the unit on ``x`` (shape ``(width,)`` or ``(batch, width)``)."""
    mags, signs = decompose(x)
    g = gate_pair(params)
    trace = mix_step(
        mags,
        signs,
        params.operand_selector,
        g.g_lin,
        g.g_log,
        sign_temperature=params.sign_temperature,
        mag_min=params.mag_min,
        log_lim=params.log_lim,
    )
    trace.params = params
    return trace.y_final, trace


def predict(params: DmuParams, x) -> np.ndarray:
    return forward(params, x)[0]
