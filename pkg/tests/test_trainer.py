import math

import numpy as np
import pytest

from dmu.report import records_csv, summary_markdown
from dmu.tasks import TaskSpec, builtin_ranges, get_range
from dmu.trainer import Adam, ExperimentRecord, TrainConfig, sparsity, summarize, sweep, train_one


def test_adam_first_step_by_hand():
    # bias-corrected m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    opt = Adam(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    p = opt.step(1.0, 0.5)
    assert p == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-15)
    assert opt.m == pytest.approx(0.05) and opt.v == pytest.approx(0.00025)


def test_adam_second_step_by_hand():
    opt = Adam(lr=0.1, beta1=0.9, beta2=0.99, eps=0.0)
    p = opt.step(0.0, 1.0)
    p = opt.step(p, -1.0)
    m = 0.9 * 0.1 - 0.1
    v = 0.99 * 0.01 + 0.01
    expected = -0.1 - 0.1 * (m / (1 - 0.81)) / math.sqrt(v / (1 - 0.99**2))
    assert p == pytest.approx(expected, rel=1e-12)


def test_adam_on_arrays():
    opt = Adam(lr=0.01)
    p = opt.step(np.array([1.0, 2.0]), np.array([1.0, -1.0]))
    assert p == pytest.approx([0.99, 2.01])


def test_adam_minimizes_quadratic():
    opt = Adam(lr=0.05)
    x = 3.0
    for _ in range(2000):
        x = opt.step(x, 2 * (x - 1.0))
    assert x == pytest.approx(1.0, abs=1e-3)


def test_sparsity():
    assert sparsity(0.2) == pytest.approx(0.2)
    assert sparsity(0.9) == pytest.approx(0.1)


@pytest.mark.parametrize("bad", [{"lr": 0.0}, {"max_steps": 0}, {"init_gate": 1.0},
                                 {"eval_interval": 0}, {"post_convergence_steps": -1}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_converges_on_add_pos():
    rec = train_one(TaskSpec("add", get_range("pos")), TrainConfig(), threshold=4.28e-7)
    assert rec.converged and rec.error is None
    assert rec.convergence_step % 10 == 0
    assert rec.steps_run == rec.convergence_step + 1000
    assert rec.extrapolation_error < rec.threshold
    assert rec.final_gate > 0.99


def test_gives_up_at_max_steps():
    cfg = TrainConfig(max_steps=30)
    rec = train_one(TaskSpec("mul", get_range("pos")), cfg, threshold=1e-30)
    assert not rec.converged and rec.convergence_step is None
    assert rec.steps_run == 30


def test_wrong_preset_is_rejected():
    with pytest.raises(ValueError, match="DMU_sub"):
        train_one(TaskSpec("div", get_range("pos")), TrainConfig(), 1e-8, preset="DMU_add")


def test_sweep_is_deterministic():
    rngs = [get_range("pos"), get_range("neg")]
    thr = {(op, r.name): 1e-3 for op in ("add", "div") for r in rngs}
    cfg = TrainConfig(max_steps=400, post_convergence_steps=20)
    a = sweep(["add", "div"], rngs, seeds=2, config=cfg, thresholds=thr)
    b = sweep(["add", "div"], rngs, seeds=2, config=cfg, thresholds=thr)
    assert len(a) == 8
    assert records_csv(a) == records_csv(b)
    assert [r.seed for r in a[:2]] == [0, 1]


def test_sweep_requires_thresholds_and_ops():
    with pytest.raises(ValueError):
        sweep(["add"], builtin_ranges()[:1], seeds=1)
    with pytest.raises(ValueError):
        sweep([], builtin_ranges()[:1], seeds=1, thresholds={})


def _rec(op, rng, conv, step=None, err=1e-6):
    return ExperimentRecord(op, rng, 0, conv, step, err, 0.01, 0.99, 100, 0.1, 0.01, 1e-5)


def test_summary_means_over_converged_runs():
    recs = [_rec("add", "pos", True, 100, 1e-6), _rec("add", "pos", True, 300, 3e-6),
            _rec("add", "neg", False, None, 1.0)]
    s = summarize(recs)["add"]
    assert s.mean_convergence_step == 200
    assert s.mean_extrapolation_error == pytest.approx(2e-6)
    assert s.success == {"pos": 100.0, "neg": 0.0}
    md = summary_markdown(summarize(recs), builtin_ranges())
    assert "| U[1, 2) | 100% |" in md and "| U[-2, -1) | 0% |" in md
    assert "NAU (published)" in md


def test_records_csv_has_no_wall_time():
    header = records_csv([_rec("add", "pos", True, 10)]).splitlines()[0]
    assert "wall_time" not in header
    assert header.startswith("operation,range_name,seed,converged")
