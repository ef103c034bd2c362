import math

import numpy as np
import pytest

from dmu.tasks import (
    OPERATIONS,
    TaskError,
    TaskSpec,
    apply_op,
    builtin_ranges,
    extrapolation_batch,
    get_range,
    iter_extrapolation,
    parse_range_table,
    sample_batch,
    streaming_mse,
)


def test_builtin_table_has_nine_ranges():
    names = [r.name for r in builtin_ranges()]
    assert names == ["n01", "n10", "n20", "neg", "p01", "p11", "p20", "pos", "sym"]


def test_labels():
    assert get_range("p01").label == "U[0.1, 0.2)"
    assert get_range("sym").extrapolation_label == "U[-6, -2) u U[2, 6)"


def test_unknown_range_lists_valid_names():
    with pytest.raises(TaskError, match="valid: n01"):
        get_range("bogus")


@pytest.mark.parametrize(
    "text, msg",
    [
        ("a 1 2 3", "expected"),
        ("a 1 2 3 4 5", "expected"),
        ("a 2 1 3 4", "lo must be"),
        ("a 1 2 4 3", "bad extrapolation"),
        ("a 1 x 3 4", "line 1"),
        ("a 1 2 3 4\na 1 2 3 4", "duplicate"),
    ],
)
def test_parse_errors(text, msg):
    with pytest.raises(TaskError, match=msg):
        parse_range_table(text)


def test_parse_comments_and_union():
    (r,) = parse_range_table("# header\nx -1 1  -3 -1 1 3  # trailing\n\n")
    assert r.extrapolation == ((-3.0, -1.0), (1.0, 3.0))


def test_training_batch_in_range_and_deterministic():
    task = TaskSpec("add", get_range("p20"), seed=3)
    x1, y1 = sample_batch(task, 7)
    x2, y2 = sample_batch(task, 7)
    assert x1.shape == (128, 2)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert np.all((x1 >= 10) & (x1 < 20))
    assert not np.array_equal(x1, sample_batch(task, 8)[0])
    assert not np.array_equal(x1, sample_batch(TaskSpec("add", get_range("p20"), seed=4), 7)[0])


def test_extrapolation_union_covers_both_sides():
    task = TaskSpec("mul", get_range("sym"))
    x, _ = extrapolation_batch(task, 20000)
    a = np.abs(x)
    assert np.all((a >= 2) & (a < 6))
    frac_neg = np.mean(x < 0)
    assert abs(frac_neg - 0.5) < 0.02


def test_chunking_does_not_change_stream():
    task = TaskSpec("sub", get_range("neg"))
    whole = np.concatenate([x for x, _ in iter_extrapolation(task, 1000, chunk=1000)])
    parts = np.concatenate([x for x, _ in iter_extrapolation(task, 1000, chunk=300)])
    # same generator, consumed in different slices
    assert np.array_equal(whole, parts)


@pytest.mark.parametrize("op", OPERATIONS)
def test_targets(op):
    x = np.array([[3.0, -1.5]])
    want = {"add": 1.5, "sub": 4.5, "mul": -4.5, "div": -2.0}[op]
    assert apply_op(op, x)[0] == want


def test_streaming_mse_matches_direct():
    task = TaskSpec("div", get_range("pos"), seed=1)
    pred = lambda x: x[:, 0] / x[:, 1] + 0.01  # noqa: E731
    assert streaming_mse(pred, task, 5000, chunk=777) == pytest.approx(1e-4, rel=1e-9)


def test_task_validation():
    with pytest.raises(TaskError, match="valid: add"):
        TaskSpec("pow", get_range("pos"))
    with pytest.raises(TaskError):
        TaskSpec("add", get_range("pos"), batch_size=0)
    with pytest.raises(TaskError):
        next(iter_extrapolation(TaskSpec("add", get_range("pos")), 0))


def test_division_denominator_guard():
    r = parse_range_table("z -1 1 -1 1")[0]
    x, y = sample_batch(TaskSpec("div", r, batch_size=4096), 0)
    assert np.all(np.abs(x[:, 1]) >= 1e-9)
    assert np.all(np.isfinite(y))
    assert math.isfinite(float(np.max(np.abs(y))))
