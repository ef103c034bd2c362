import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmu.core import GATE_SOFTMAX, DmuError, DmuParams, forward, nalm_params
from dmu.grad import backward, fd_gradient, loss_and_grad, mse_loss

GRAD_RTOL = 1e-5
# gradients below this are compared absolutely
GRAD_FLOOR = 1e-6


def random_config(rng, i):
    mode = "logistic" if i % 2 else GATE_SOFTMAX
    raw = rng.uniform(-0.3, 0.3) if mode == "logistic" else tuple(rng.uniform(-0.3, 0.3, 2))
    params = DmuParams(
        operand_selector=tuple(rng.uniform(-1.5, 1.5, 2)),
        gate_raw=raw,
        sign_temperature=rng.uniform(0.5, 2.0),
        gate_temperature=rng.uniform(0.5, 2.0),
        operand_frozen=False,
        gate_mode=mode,
    )
    x = rng.uniform(0.5, 3.0, (8, 2)) * rng.choice([-1.0, 1.0], (8, 2))
    return params, x, rng.normal(size=8)


def flat(g):
    return np.concatenate([np.atleast_1d(g.d_gate_raw), g.d_operand_selector])


def rel_err(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), GRAD_FLOOR)
    return float(np.max(np.abs(a - b) / scale))


def gradient_check(configs=1000, seed=1):
    """Worst relative error of backward vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(configs):
        params, x, target = random_config(rng, i)
        _, g = loss_and_grad(params, x, target)
        worst = max(worst, rel_err(flat(g), flat(fd_gradient(params, x, target))))
    return worst


def test_backward_matches_finite_differences():
    assert gradient_check(1000) <= GRAD_RTOL


def test_frozen_selector_has_no_selector_gradient():
    p = nalm_params("DMU_add", g_lin=0.4)
    _, g = loss_and_grad(p, np.array([[1.0, 2.0]]), np.array([3.0]))
    assert g.d_operand_selector is None
    assert fd_gradient(p, np.array([[1.0, 2.0]]), np.array([3.0])).d_operand_selector is None


def test_logistic_gate_gradient_at_known_point():
    # g = 0.5, T = 1: dL/draw = (dL/dg_lin - dL/dg_log) / 4
    p = DmuParams(operand_selector=(1.0, 1.0), gate_raw=0.0, gate_temperature=1.0)
    x = np.array([[1.0, 2.0]])
    _, g = loss_and_grad(p, x, np.array([0.0]))
    assert g.d_gate_raw == pytest.approx(fd_gradient(p, x, np.array([0.0])).d_gate_raw, rel=1e-6)


def test_clamped_log_path_has_zero_gradient():
    p = DmuParams(operand_selector=(1.0, 1.0), gate_raw=-0.5, log_lim=1.0, operand_frozen=False)
    x = np.array([[50.0, 60.0]])
    y, tr = forward(p, x)
    assert tr.clamp_m_log.all()
    g = backward(p, tr, np.ones_like(y))
    assert g.d_gate_raw == 0.0 or abs(g.d_gate_raw) < 1e-12


def test_backward_rejects_mismatched_trace():
    p = nalm_params("DMU_add", g_lin=0.4)
    _, tr = forward(p, np.array([1.0, 2.0]))
    with pytest.raises(DmuError):
        backward(p.with_gate_value(0.6), tr, 1.0)


def test_fd_rejects_bad_step():
    with pytest.raises(DmuError):
        fd_gradient(nalm_params("DMU_add"), np.ones((1, 2)), np.ones(1), h=0.0)


finite = st.floats(-1e6, 1e6, allow_nan=False)
gate = st.floats(1e-6, 1 - 1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=2, max_size=2), gate, st.sampled_from(["DMU_add", "DMU_sub"]))
def test_forward_is_finite_and_bounded(x, g, preset):
    p = nalm_params(preset, g_lin=g)
    y, tr = forward(p, np.array(x))
    assert np.isfinite(y)
    assert abs(tr.s_mix) <= 1.0 + 1e-12
    assert abs(y) <= np.exp(p.log_lim) * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=2), gate)
def test_loss_is_nonnegative_and_gradient_finite(x, g):
    p = nalm_params("DMU_sub", g_lin=g)
    xs = np.array([x])
    assert mse_loss(p, xs, np.array([1.0])) >= 0.0
    _, grads = loss_and_grad(p, xs, np.array([1.0]))
    assert np.all(np.isfinite(grads.d_gate_raw))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(0.5, 4.0))
def test_exact_domains_have_zero_loss(a, b):
    # at the pure linear gate DMU_add is exact on positive inputs
    p = nalm_params("DMU_add", g_lin=1 - 1e-15)
    assert mse_loss(p, np.array([[a, b]]), np.array([a + b])) < 1e-16 * (a + b) ** 2 + 1e-20
