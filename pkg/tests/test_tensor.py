"""Engine-level tests: arithmetic ops, backward pass, Adam, .ten files."""

import numpy as np
import pytest

from pansharp.tensor import (
    AdamState,
    GradCheckResult,
    NumericError,
    Tensor,
    adam_step,
    add,
    finite_diff_check,
    l1_loss,
    load_ten,
    save_ten,
    scalar_mul,
    sub,
    sum_all,
    weighted_sum,
    zero_grads,
)

import oracles


def rand_tensor(rng, shape, requires_grad=False, dtype=np.float64):
    return Tensor(rng.standard_normal(shape).astype(dtype), requires_grad=requires_grad)


def test_add_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[10.0, 20.0], [30.0, 40.0]])
    assert np.array_equal(add(a, b).data, [[11.0, 22.0], [33.0, 44.0]])


def test_add_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 2\).*\(3,\)"):
        add(Tensor(np.zeros((2, 2))), Tensor(np.zeros(3)))


def test_sub_and_scalar_mul_values():
    a = Tensor([3.0, 5.0])
    b = Tensor([1.0, 1.0])
    assert np.array_equal(sub(a, b).data, [2.0, 4.0])
    assert np.array_equal(scalar_mul(2.0, a).data, [6.0, 10.0])


def test_l1_loss_identical_is_zero():
    x = Tensor(np.linspace(0, 1, 12).reshape(3, 4))
    assert float(l1_loss(x, x).data) == 0.0


def test_l1_loss_known_value():
    pred = Tensor([0.0, 2.0, -1.0, 3.0])
    target = Tensor([1.0, 2.0, 1.0, -1.0])
    assert float(l1_loss(pred, target).data) == pytest.approx((1 + 0 + 2 + 4) / 4)


def test_backward_of_sum_of_double():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    y = sum_all(scalar_mul(2.0, x))
    y.backward()
    assert np.array_equal(x.grad, np.full((2, 3), 2.0))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        add(x, x).backward()


def test_l1_gradient_sign_convention():
    pred = Tensor(np.array([2.0, -3.0, 1.0, 1.0]), requires_grad=True)
    target = Tensor(np.array([1.0, 0.0, 5.0, 1.0]))
    l1_loss(pred, target).backward()
    # sign(diff)/n with sign(0) = 0 at the tie
    assert np.array_equal(pred.grad, np.array([0.25, -0.25, -0.25, 0.0]))


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = sum_all(add(x, x))
    y.backward()
    assert np.array_equal(x.grad, np.array([2.0, 2.0]))


def test_unreachable_parameter_keeps_zero_grad():
    rng = np.random.default_rng(0)
    used = rand_tensor(rng, (3,), requires_grad=True)
    unused = rand_tensor(rng, (3,), requires_grad=True)
    zero_grads([used, unused])
    sum_all(used).backward()
    assert np.array_equal(unused.grad, np.zeros(3))
    assert np.array_equal(used.grad, np.ones(3))


def test_backward_linearity():
    """grad(a*l1 + b*l2) == a*grad(l1) + b*grad(l2) to 1e-10."""
    rng = np.random.default_rng(7)
    xv = rng.standard_normal((4, 5))
    w1 = rng.standard_normal((4, 5))
    w2 = rng.standard_normal((4, 5))
    a, b = 0.7, -2.3

    x = Tensor(xv, requires_grad=True)
    add(scalar_mul(a, weighted_sum(x, w1)), scalar_mul(b, weighted_sum(x, w2))).backward()
    combined = x.grad.copy()

    x1 = Tensor(xv, requires_grad=True)
    weighted_sum(x1, w1).backward()
    x2 = Tensor(xv, requires_grad=True)
    weighted_sum(x2, w2).backward()
    assert np.max(np.abs(combined - (a * x1.grad + b * x2.grad))) < 1e-10


def test_finite_diff_on_composite_expression():
    rng = np.random.default_rng(11)
    proj = rng.standard_normal((3, 4))

    def fn(a, b):
        return weighted_sum(sub(scalar_mul(1.7, a), b), proj)

    res = finite_diff_check(fn, [rand_tensor(rng, (3, 4)), rand_tensor(rng, (3, 4))])
    assert isinstance(res, GradCheckResult)
    assert res.passed, res


def test_finite_diff_on_l1():
    rng = np.random.default_rng(13)
    t = rng.standard_normal((4, 4))

    def fn(p):
        return l1_loss(p, Tensor(t))

    res = finite_diff_check(fn, [rand_tensor(rng, (4, 4))])
    assert res.passed, res


def test_finite_diff_reports_a_wrong_gradient():
    """Sentinel: a deliberately negated backward rule must be caught."""

    def broken_double(x):
        out = Tensor(2.0 * x.data)
        out._parents = (x,)

        def _bwd(g):
            x.grad += -2.0 * g  # wrong sign on purpose

        out._backward_fn = _bwd
        return sum_all(out)

    res = finite_diff_check(broken_double, [Tensor(np.array([1.0, -2.0]))])
    assert not res.passed


def test_check_finite_raises_on_nan():
    t = Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericError, match="loss"):
        t.check_finite("loss")
    assert Tensor(np.ones(3)).check_finite().is_finite()


def test_adam_zero_grad_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    before = p.data.copy()
    adam_step([p], [np.zeros(3)], state)
    assert np.array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = Tensor(np.array([0.5]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.array([1.0])], state)
    # bias-corrected mhat/sqrt(vhat) = 1 on the first step
    assert float(p.data[0]) == pytest.approx(0.4, abs=1e-8)


def test_adam_matches_reference_trace():
    """Five steps on f(t) = t^2 from t = 1 against a hand-rolled loop."""
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.05)
    mine = []
    for _ in range(5):
        g = 2.0 * p.data.copy()
        adam_step([p], [g], state)
        mine.append(float(p.data[0]))
    ref = oracles.adam_ref(1.0, lambda t: 2.0 * t, steps=5, lr=0.05)
    assert np.max(np.abs(np.array(mine) - np.array(ref))) < 1e-12


def test_adam_shape_mismatch_is_an_error():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState.for_params([p])
    with pytest.raises(ValueError, match="shape"):
        adam_step([p], [np.zeros(4)], state)


def test_adam_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        p = Tensor(rng.standard_normal(8).astype(np.float32), requires_grad=True)
        state = AdamState.for_params([p], lr=1e-3)
        for _ in range(25):
            g = (p.data * 0.3 + 1.0).astype(np.float32)
            adam_step([p], [g], state)
        return p.data.tobytes()

    assert run() == run()


def test_ten_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.standard_normal((3, 5, 2)).astype(np.float32)
    path = tmp_path / "x.ten"
    save_ten(path, arr)
    back = load_ten(path)
    assert back.shape == (3, 5, 2)
    assert np.array_equal(back, arr)


def test_ten_layout_is_exactly_as_documented(tmp_path):
    path = tmp_path / "t.ten"
    save_ten(path, np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"TEN1"
    assert raw[4] == 2
    assert raw[5:13] == (2).to_bytes(4, "little") * 2
    assert np.frombuffer(raw[13:], dtype="<f4").tolist() == [1.0, 2.0, 3.0, 4.0]


def test_ten_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ten"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError, match="magic"):
        load_ten(path)


def test_ten_rejects_truncated_payload(tmp_path):
    path = tmp_path / "short.ten"
    save_ten(path, np.ones((4, 4), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_ten(path)
