import numpy as np
import pytest

from dmu.core import DmuError, mix_step, decompose
from dmu.reference import THRESHOLDS, published_threshold
from dmu.tasks import TaskSpec, extrapolation_batch, get_range
from dmu.thresholds import (
    PERTURB_ALL,
    PERTURB_GATE,
    PERTURB_GATE_PAIR,
    compute_threshold,
    optimal_params,
    read_threshold_csv,
    records_to_csv,
    threshold_table,
)


def brute_threshold(op, range_name, eps, n):
    """Independent recomputation: loop over the 16 perturbations on one batch."""
    x, y = extrapolation_batch(TaskSpec(op, get_range(range_name)), n)
    mags, signs = decompose(x)
    O0 = np.array([1.0, 1.0]) if op in ("add", "mul") else np.array([1.0, -1.0])
    lin = op in ("add", "sub")
    worst = 0.0
    for a in (1, -1):
        for b in (1, -1):
            for c in (1, -1):
                for d in (1, -1):
                    O = O0 + eps * np.array([c, d])
                    gl = (1.0 if lin else 0.0) + a * eps
                    gg = (0.0 if lin else 1.0) + b * eps
                    tr = mix_step(mags, signs, O, gl, gg, sign_temperature=1e-3)
                    worst = max(worst, float(np.mean((tr.y_final - y) ** 2)))
    return worst


@pytest.mark.parametrize("op, rng", [("add", "pos"), ("div", "sym"), ("mul", "p20")])
def test_matches_brute_force(op, rng):
    got = compute_threshold(op, rng, n=20000).threshold
    assert got == pytest.approx(brute_threshold(op, rng, 1e-5, 20000), rel=1e-9)


def test_zero_epsilon_gives_unperturbed_loss():
    for op in ("add", "sub", "mul", "div"):
        t = compute_threshold(op, "pos", epsilon=0.0, n=10000).threshold
        assert t <= brute_threshold(op, "pos", 0.0, 10000) * (1 + 1e-9)
        assert t < compute_threshold(op, "pos", n=10000).threshold


def test_threshold_grows_with_epsilon():
    a = compute_threshold("mul", "pos", epsilon=1e-6, n=10000).threshold
    b = compute_threshold("mul", "pos", epsilon=1e-5, n=10000).threshold
    assert b > 50 * a


def test_modes_are_nested():
    g = compute_threshold("add", "pos", n=10000, perturb=PERTURB_GATE).threshold
    gp = compute_threshold("add", "pos", n=10000, perturb=PERTURB_GATE_PAIR).threshold
    al = compute_threshold("add", "pos", n=10000, perturb=PERTURB_ALL).threshold
    assert g <= gp <= al


def test_optimal_params_sit_on_domain():
    assert optimal_params("add").gates().g_lin > 1 - 1e-12
    assert optimal_params("div").gates().g_lin < 1e-12
    assert optimal_params("div").operand_selector == (1.0, -1.0)


def test_validation():
    with pytest.raises(DmuError):
        compute_threshold("add", "pos", epsilon=-1.0)
    with pytest.raises(DmuError):
        compute_threshold("add", "pos", n=0)
    with pytest.raises(DmuError, match="valid"):
        compute_threshold("add", "pos", perturb="wiggle")
    with pytest.raises(DmuError):
        optimal_params("pow")


def test_csv_roundtrip(tmp_path):
    recs = threshold_table(["add", "div"], [get_range("pos"), get_range("neg")], n=2000)
    assert len(recs) == 4
    path = tmp_path / "t.csv"
    path.write_text(records_to_csv(recs))
    table = read_threshold_csv(path)
    assert table[("div", "neg")] == recs[3].threshold
    assert path.read_text().splitlines()[0] == "op,range,epsilon,n,threshold"


def test_reference_table_lookup():
    assert published_threshold("add", "n01") == 3.64e-07
    assert published_threshold("div", "sym") == 4.55e-08
    assert len(THRESHOLDS) == 9
