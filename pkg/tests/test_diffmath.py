import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from m3rec import diffmath as dm
from m3rec.diffmath import Parameter, Tape

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, (n,), elements=finite)


def grad_of(f, x):
    p = Parameter("x", np.array(x, dtype=np.float64))
    tape = Tape()
    out = f(tape.param(p))
    tape.backward(dm.total(out))
    return p.grad


def test_matmul_identity_and_annihilator():
    t = Tape()
    a = t.const([[1, 2], [3, 4]])
    assert np.array_equal(dm.matmul(a, t.const(np.eye(2))).value, [[1, 2], [3, 4]])
    z = dm.matmul(t.const([[1, 0], [0, 0]]), t.const([[0], [5]]))
    assert np.array_equal(z.value, [[0], [0]])


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    t = Tape()
    got = dm.matmul(t.const(a), t.const(b)).value
    want = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            want[i, j] = math.fsum(a[i, k] * b[k, j] for k in range(4))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    t = Tape()
    with pytest.raises(dm.DimensionError):
        dm.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))


def test_elementwise_symmetry_points():
    assert grad_of(lambda x: dm.sigmoid(x), [[0.0]])[0, 0] == 0.25
    assert grad_of(lambda x: dm.tanh(x), [[0.0]])[0, 0] == 1.0
    t = Tape()
    assert dm.elementwise("sigmoid", t.const(0.0)).item() == 0.5
    assert dm.elementwise("tanh", t.const(0.0)).item() == 0.0
    assert np.array_equal(dm.elementwise("relu", t.const([[-3.0, 3.0]])).value, [[0.0, 3.0]])
    with pytest.raises(ValueError):
        dm.elementwise("gelu", t.const(1.0))


def test_sigmoid_extreme_inputs_do_not_overflow():
    t = Tape()
    s = dm.sigmoid(t.const([[-1000.0, 1000.0]])).value
    assert np.array_equal(s, [[0.0, 1.0]])


def test_hadamard_examples():
    t = Tape()
    x = t.const([[1.0, 2.0]])
    assert np.array_equal(dm.hadamard(x, t.const([[3.0, 4.0]])).value, [[3.0, 8.0]])
    assert np.array_equal(dm.hadamard(x, t.const(np.ones((1, 2)))).value, x.value)
    assert np.array_equal(dm.hadamard(x, t.const(np.zeros((1, 2)))).value, [[0.0, 0.0]])
    with pytest.raises(dm.DimensionError):
        dm.hadamard(x, t.const(np.ones((2, 1))))


def test_concat_examples():
    t = Tape()
    assert np.array_equal(dm.concat(t.const([1.0]), t.const([2.0])).value, [[1.0], [2.0]])
    x = t.const([1.0, 2.0, 3.0])
    assert np.array_equal(dm.concat(x, t.const(np.zeros((0, 1)))).value, x.value)


def test_concat_gradient_is_leading_weights():
    w = np.array([[0.3], [-1.2], [2.0], [0.7], [5.0]])
    px, py = Parameter("x", [1.0, 2.0]), Parameter("y", [3.0, 4.0, 5.0])
    tape = Tape()
    loss = dm.matmul(dm.transpose(dm.concat(tape.param(px), tape.param(py))), tape.const(w))
    tape.backward(loss)
    np.testing.assert_array_equal(px.grad, w[:2])
    np.testing.assert_array_equal(py.grad, w[2:])


def test_softmax_examples():
    t = Tape()
    np.testing.assert_allclose(dm.softmax(t.const([0.0, 0.0, 0.0])).value[:, 0], [1 / 3] * 3, atol=1e-15)
    p = dm.softmax(t.const([1000.0, 0.0])).value[:, 0]
    assert np.all(np.isfinite(p)) and p[0] == 1.0 and p[1] < 1e-300


def test_softmax_matches_extended_precision():
    z = np.random.default_rng(0).normal(size=5) * 3
    e = np.exp(z.astype(np.longdouble))
    want = (e / e.sum()).astype(np.float64)
    got = dm.softmax(Tape().const(z)).value[:, 0]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_softmax_rejects_matrix_and_empty():
    t = Tape()
    with pytest.raises(dm.DimensionError):
        dm.softmax(t.const(np.ones((2, 2))))
    with pytest.raises(ValueError):
        dm.softmax(t.const(np.zeros((0, 1))))


@given(vec(6), st.floats(-100, 100))
def test_softmax_is_a_distribution_and_shift_invariant(z, c):
    t = Tape()
    p = dm.softmax(t.const(z)).value
    assert np.all(p >= 0) and abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(dm.softmax(t.const(z + c)).value, p, atol=1e-12)


def test_cross_entropy_examples():
    t = Tape()
    z = np.zeros(7)
    z[2] = 30.0
    assert dm.softmax_cross_entropy(t.const(z), 2).item() < 1e-12
    assert dm.softmax_cross_entropy(t.const(np.zeros(7)), 4).item() == pytest.approx(math.log(7), abs=1e-12)
    assert math.log(7) == pytest.approx(1.9459, abs=5e-5)


def test_cross_entropy_grad_at_uniform_logits():
    p = Parameter("z", np.zeros((1, 7)))
    tape = Tape()
    tape.backward(dm.softmax_cross_entropy(tape.param(p), [3]))
    want = np.full((1, 7), 1 / 7)
    want[0, 3] -= 1
    np.testing.assert_allclose(p.grad, want, atol=1e-15)


def test_cross_entropy_sums_rows():
    z = np.random.default_rng(1).normal(size=(4, 5))
    t = Tape()
    whole = dm.softmax_cross_entropy(t.const(z), [0, 1, 2, 3]).item()
    parts = sum(dm.softmax_cross_entropy(t.const(z[i:i + 1]), [i]).item() for i in range(4))
    assert whole == pytest.approx(parts, abs=1e-12)


def test_cross_entropy_errors():
    t = Tape()
    with pytest.raises(IndexError):
        dm.softmax_cross_entropy(t.const(np.zeros((1, 3))), [3])
    with pytest.raises(dm.DimensionError):
        dm.softmax_cross_entropy(t.const(np.zeros((2, 3))), [0])


def test_quadratic_finite_difference():
    p = Parameter("theta", [1.0, 2.0])

    def f(tape):
        x = tape.param(p)
        return dm.matmul(dm.transpose(x), x)

    assert dm.finite_diff_check(f, [p]) < 1e-8
    np.testing.assert_allclose(p.grad, [[2.0], [4.0]])


def test_constant_function_has_zero_error():
    p = Parameter("theta", [1.0, 2.0])
    assert dm.finite_diff_check(lambda tape: tape.const(3.0), [p]) == 0.0
    assert np.all(p.grad == 0)


def test_nondeterministic_forward_is_reported():
    p = Parameter("theta", [1.0])
    calls = iter(range(100))
    with pytest.raises(dm.OracleError):
        dm.finite_diff_check(lambda tape: tape.const(float(next(calls))), [p])


def test_finite_diff_rejects_bad_eps():
    with pytest.raises(ValueError):
        dm.finite_diff_check(lambda tape: tape.const(0.0), [], eps=0.0)


def test_every_op_against_finite_differences():
    """Compose all differentiable ops into one loss and check its gradient."""
    rng = np.random.default_rng(7)
    a = Parameter("a", rng.normal(size=(3, 4)))
    b = Parameter("b", rng.normal(size=(4, 2)))
    bias = Parameter("bias", rng.normal(size=(1, 2)))
    col = Parameter("col", rng.normal(size=(2, 1)))
    w = Parameter("w", rng.normal(size=(3, 1)))

    def f(tape):
        x = dm.add(dm.matmul(tape.param(a), tape.param(b)), tape.param(bias))
        y = dm.add(dm.tanh(x), tape.param(col))
        y = dm.hadamard(dm.sigmoid(y), dm.relu(dm.affine(x, 2.0, 0.3)))
        y = dm.sub(dm.one_minus(y), dm.scale(x, 0.5))
        rows = dm.take_rows(y, [0, 2, 2, 1])
        seg = dm.segment_sum(dm.mul_rows(rows, dm.take_rows(tape.param(w), [0, 1, 1, 2])), [0, 1, 1, 0], 2)
        sm = dm.segment_softmax(tape.param(w), [0, 1, 0], 2)
        vecsm = dm.softmax(dm.concat(sm, tape.param(col)))
        ce = dm.softmax_cross_entropy(seg, [1, 0])
        wide = dm.hcat(y, dm.transpose(dm.take_rows(dm.transpose(y), [1])))
        return dm.add(dm.add(ce, dm.total(vecsm * vecsm)), dm.total(dm.sigmoid(wide)))

    assert dm.finite_diff_check(f, [a, b, bias, col, w]) < 1e-6


def test_segment_softmax_oracle():
    z = np.array([1.0, 2.0, -1.0, 0.5, 3.0])
    seg = [0, 1, 0, 1, 2]
    p = dm.segment_softmax(Tape().const(z), seg, 3).value[:, 0]
    for s in range(3):
        idx = [i for i, g in enumerate(seg) if g == s]
        e = np.exp(z[idx])
        np.testing.assert_allclose(p[idx], e / e.sum(), atol=1e-15)


def test_shared_leaf_accumulates():
    p = Parameter("x", [[1.0, -2.0]])
    tape = Tape()
    x = tape.param(p)
    assert tape.param(p) is x
    tape.backward(dm.total(dm.add(dm.hadamard(x, x), x)))
    np.testing.assert_array_equal(p.grad, [[3.0, -3.0]])


def test_backward_twice_is_an_error():
    p = Parameter("x", [[1.0]])
    tape = Tape()
    loss = dm.total(tape.param(p))
    tape.backward(loss)
    with pytest.raises(dm.TapeError):
        tape.backward(loss)
    with pytest.raises(dm.TapeError):
        dm.total(tape.param(p))


def test_backward_visits_every_record_once():
    p = Parameter("x", np.ones((2, 2)))
    tape = Tape()
    x = tape.param(p)
    y = dm.tanh(dm.matmul(x, x))
    loss = dm.total(dm.add(y, x))
    tape.backward(loss)
    assert tape.visited == len(tape.records) == 4


def test_backward_needs_scalar():
    with pytest.raises(dm.DimensionError):
        Tape().backward(Tape().const(np.ones((2, 1))))


def test_as_matrix_shapes():
    assert dm.as_matrix(3.0).shape == (1, 1)
    assert dm.as_matrix([1, 2, 3]).shape == (3, 1)
    with pytest.raises(dm.DimensionError):
        dm.as_matrix(np.zeros((2, 2, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)), arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_matmul_gradient_matches_closed_form(a, b):
    pa, pb = Parameter("a", a), Parameter("b", b)
    tape = Tape()
    tape.backward(dm.total(dm.tanh(dm.matmul(tape.param(pa), tape.param(pb)))))
    d = 1.0 - np.tanh(a @ b) ** 2
    np.testing.assert_allclose(pa.grad, d @ b.T, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(pb.grad, a.T @ d, rtol=1e-12, atol=1e-300)
