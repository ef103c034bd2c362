"""Reverse-mode gradients through a DMU forward trace, plus a finite-difference oracle.

Clamps use the hard subgradient: where a clamp changed its argument the
gradient through that site is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    GATE_LOGISTIC,
    DmuError,
    DmuParams,
    ForwardTrace,
    forward,
    gate_pair,
)


@dataclass
class Gradients:
    d_gate_raw: float | np.ndarray
    d_operand_selector: np.ndarray | None = None


@dataclass
class StepGradients:
    """Gradients of one mixing step w.r.t. all of its inputs."""

    d_g_lin: float
    d_g_log: float
    d_operand_selector: np.ndarray
    d_mags: np.ndarray
    d_signs: np.ndarray


def step_backward(
    trace: ForwardTrace,
    d_y_final,
    sign_temperature: float,
    d_m_final=0.0,
    d_s_mix=0.0,
) -> StepGradients:
    """Backpropagate through one mixing step.

    ``d_m_final`` and ``d_s_mix`` carry extra upstream gradient for callers
    (the DAG executor) that consume magnitude and sign separately.
    """
    t = trace
    dy = np.broadcast_to(np.asarray(d_y_final, dtype=np.float64), t.y_final.shape)

    d_s_mix = dy * t.m_final + d_s_mix
    d_m_log = (dy * t.s_mix + d_m_final) * t.m_final
    d_m_pre = np.where(t.clamp_m_log, 0.0, d_m_log)

    d_g_lin = float(np.sum(d_s_mix * t.s_lin) + np.sum(d_m_pre * t.y_lin_log))
    d_g_log = float(np.sum(d_s_mix * t.s_log) + np.sum(d_m_pre * t.y_log_clamped))

    d_s_lin = d_s_mix * t.g_lin
    d_s_log = d_s_mix * t.g_log
    d_y_log = np.where(t.clamp_y_log, 0.0, d_m_pre * t.g_log)
    d_smooth = np.where(t.clamp_smooth_abs, 0.0, d_m_pre * t.g_lin / t.smooth_abs_value)
    d_y_lin = d_smooth * t.y_lin / t.smooth_abs_value
    d_y_lin = d_y_lin + d_s_lin * (1.0 - t.s_lin * t.s_lin) / sign_temperature

    O = t.operand_selector
    d_neg = d_s_log * (-np.pi * np.sin(np.pi * t.neg_count))
    d_signs = -0.5 * d_neg[..., None] * np.abs(O)

    d_log_mag = d_y_log[..., None] * O
    safe_mag = np.where(t.clamp_mag, 1.0, t.x_mag)
    d_mags = d_y_lin[..., None] * O * t.x_sign + np.where(t.clamp_mag, 0.0, d_log_mag / safe_mag)
    d_signs = d_signs + d_y_lin[..., None] * O * t.x_mag

    signed = t.x_mag * t.x_sign
    d_O = d_y_lin[..., None] * signed + d_y_log[..., None] * t.log_mag
    d_O = d_O + d_neg[..., None] * 0.5 * (1.0 - t.x_sign) * np.sign(O)
    d_O = d_O.reshape(-1, O.shape[0]).sum(axis=0)
    return StepGradients(d_g_lin, d_g_log, d_O, d_mags, d_signs)


def gate_raw_grad(params: DmuParams, d_g_lin: float, d_g_log: float):
    """Chain gate-value gradients back to the raw gate parameter(s)."""
    g = gate_pair(params)
    T = params.gate_temperature
    if params.gate_mode == GATE_LOGISTIC:
        # d g_lin / d raw = g(1-g)/T and g_log = 1 - g_lin
        return (d_g_lin - d_g_log) * g.g_lin * g.g_log / T
    p = np.array([g.g_lin, g.g_log])
    d_p = np.array([d_g_lin, d_g_log])
    return p * (d_p - np.dot(p, d_p)) / T


def backward(params: DmuParams, trace: ForwardTrace, d_y_final) -> Gradients:
    """Gradient of ``sum(d_y_final * y_final)`` w.r.t. the learnable parameters."""
    if trace.params is not None and trace.params != params:
        raise DmuError("trace was produced with different parameters")
    if len(trace.operand_selector) != params.width or not np.array_equal(
        trace.operand_selector, np.asarray(params.operand_selector)
    ):
        raise DmuError("trace operand selector does not match params")
    g = gate_pair(params)
    if g.g_lin != trace.g_lin:
        raise DmuError("trace gate does not match params")
    sg = step_backward(trace, d_y_final, params.sign_temperature)
    d_raw = gate_raw_grad(params, sg.d_g_lin, sg.d_g_log)
    d_O = None if params.operand_frozen else sg.d_operand_selector
    return Gradients(d_raw, d_O)


def mse_loss(params: DmuParams, x, target) -> float:
    y, _ = forward(params, x)
    r = y - np.asarray(target, dtype=np.float64)
    return float(np.mean(r * r))


def loss_and_grad(params: DmuParams, x, target) -> tuple[float, Gradients]:
    """Mean squared error and its gradient."""
    y, trace = forward(params, x)
    r = y - np.asarray(target, dtype=np.float64)
    loss = float(np.mean(r * r))
    return loss, backward(params, trace, 2.0 * r / r.size)


def fd_gradient(params: DmuParams, x, target, h: float = 1e-6) -> Gradients:
    """Central-difference gradient of the MSE loss."""
    if not h > 0:
        raise DmuError("h must be positive")

    def loss_at(p):
        return mse_loss(p, x, target)

    if params.gate_mode == GATE_LOGISTIC:
        th = params.gate_raw
        d_raw = (
            loss_at(replace(params, gate_raw=th + h)) - loss_at(replace(params, gate_raw=th - h))
        ) / (2 * h)
    else:
        raw = np.asarray(params.gate_raw)
        d_raw = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            d_raw[i] = (
                loss_at(replace(params, gate_raw=tuple(raw + e)))
                - loss_at(replace(params, gate_raw=tuple(raw - e)))
            ) / (2 * h)

    d_O = None
    if not params.operand_frozen:
        O = np.asarray(params.operand_selector)
        d_O = np.zeros_like(O)
        for i in range(O.size):
            e = np.zeros_like(O)
            e[i] = h
            d_O[i] = (
                loss_at(replace(params, operand_selector=tuple(O + e)))
                - loss_at(replace(params, operand_selector=tuple(O - e)))
            ) / (2 * h)
    return Gradients(d_raw, d_O)
