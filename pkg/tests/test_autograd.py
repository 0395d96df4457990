import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcd_da.autograd import Primitive, Tape, Tensor, apply_primitive, backward, grad_check
from mcd_da.errors import DomainError, NotScalar, ShapeMismatch, StaleRecord


def test_relu_forward():
    out = Tape().relu(Tensor([-1.0, 0.0, 2.5]))
    assert out.data.tolist() == [0.0, 0.0, 2.5]


def test_softmax_uniform():
    out = Tape().softmax(Tensor([[0.0, 0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(out.data, [[0.25] * 4], atol=1e-15)


def test_matmul_identity():
    a = np.arange(12.0).reshape(3, 4)
    out = apply_primitive(Primitive.MATMUL, [Tensor(np.eye(3)), Tensor(a)], Tape())
    np.testing.assert_array_equal(out.data, a)


def test_batchnorm_two_values():
    # mean 2, biased var 1: (x - 2) / sqrt(1 + 1e-5)
    tape = Tape()
    out = tape.batch_norm(Tensor([[1.0], [3.0]]), Tensor([1.0]), Tensor([0.0]), eps=1e-5)
    expected = np.array([[-1.0], [1.0]]) / np.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-15)
    assert abs(out.data[1, 0] - 0.999995000037) < 1e-11


def test_batchnorm_running_stats_and_eval():
    mean, var = np.zeros(1), np.ones(1)
    tape = Tape()
    tape.batch_norm(Tensor([[1.0], [3.0]]), Tensor([1.0]), Tensor([0.0]),
                    momentum=0.1, running=(mean, var))
    assert mean[0] == pytest.approx(0.2)
    assert var[0] == pytest.approx(1.0)
    out = tape.batch_norm(Tensor([[0.2]]), Tensor([2.0]), Tensor([1.0]), training=False, running=(mean, var))
    assert out.data[0, 0] == pytest.approx(1.0)
    assert mean[0] == pytest.approx(0.2)


def test_mean_all_gradient():
    tape = Tape()
    x = Tensor([1.0, -2.0, 3.0, 4.0])
    grads = backward(tape, tape.mean_all(x))
    np.testing.assert_array_equal(grads.wrt(x), [0.25] * 4)


def test_abs_gradient_sign():
    tape = Tape()
    x = Tensor([-3.0])
    assert tape.backward(tape.abs(x)).wrt(x).tolist() == [-1.0]
    tape = Tape()
    z = Tensor([0.0])
    assert tape.backward(tape.abs(z)).wrt(z).tolist() == [0.0]


def test_softmax_cross_entropy_gradient_at_uniform_logits():
    # analytic value p - onehot = [0.5 - 1, 0.5]
    tape = Tape()
    logits = Tensor([[0.0, 0.0]])
    logp = tape.log(tape.softmax(logits, axis=1))
    loss = tape.neg(tape.mean_all(tape.gather(logp, np.array([0]))))
    np.testing.assert_allclose(tape.backward(loss).wrt(logits), [[-0.5, 0.5]], atol=1e-15)

    def f(t, x):
        lp = t.log(t.softmax(x, axis=1))
        return t.neg(t.mean_all(t.gather(lp, np.array([0]))))

    assert grad_check(f, np.zeros((1, 2))).passed


def test_gradients_off_path_are_zero():
    tape = Tape()
    a, b = Tensor([1.0, 2.0]), Tensor([5.0, 6.0])
    tape.relu(b)
    grads = tape.backward(tape.mean_all(a))
    np.testing.assert_array_equal(grads.wrt(b), [0.0, 0.0])


def test_backward_store_sets_leaf_grad():
    tape = Tape()
    x = Tensor([1.0, 2.0])
    tape.backward(tape.mean_all(tape.mul(x, x)), store=True)
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


@pytest.mark.parametrize("make", [
    lambda t: t.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))),
    lambda t: t.add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2))),
    lambda t: t.sub(Tensor([1.0, 2.0]), Tensor([1.0])),
    lambda t: t.gather(Tensor(np.ones((2, 3))), np.array([0, 3])),
])
def test_shape_mismatch(make):
    with pytest.raises(ShapeMismatch):
        make(Tape())


def test_log_domain_error():
    with pytest.raises(DomainError):
        Tape().log(Tensor([1.0, 0.0]))
    # with a floor the value is clamped instead
    assert Tape().log(Tensor([0.0]), floor=1e-12).item() == pytest.approx(np.log(1e-12))


def test_not_scalar_and_stale():
    tape = Tape()
    x = Tensor([1.0, 2.0])
    with pytest.raises(NotScalar):
        tape.backward(tape.relu(x))
    with pytest.raises(StaleRecord):
        Tape().backward(Tensor([1.0]))
    grads = tape.backward(tape.mean_all(x))
    with pytest.raises(StaleRecord):
        grads[10_000]


def test_record_is_topologically_ordered():
    tape = Tape()
    x = Tensor(np.ones((2, 2)))
    y = tape.softmax(tape.relu(tape.matmul(x, x)))
    tape.mean_all(y)
    seen = set()
    for node in tape.nodes:
        produced = {n.output for n in tape.nodes}
        for i in node.inputs:
            assert i in seen or i not in produced
        seen.add(node.output)


def test_grad_check_linear_is_tight():
    rep = grad_check(lambda t, x: t.mean_all(x), np.random.default_rng(0).normal(size=7))
    assert rep.passed and rep.max_rel_error < 1e-8


def test_grad_check_excludes_kink():
    rep = grad_check(lambda t, x: t.mean_all(t.abs(x)), np.array([0.0]))
    assert rep.excluded == [0]
    assert rep.checked == 0 and rep.passed


def test_backward_deterministic_and_linear():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 4))
    xv = rng.normal(size=(5, 3))

    def run(scale):
        tape = Tape()
        x = Tensor(xv)
        out = tape.softmax(tape.matmul(x, Tensor(w)), axis=1)
        loss = tape.mean_all(tape.abs(tape.sub(out, Tensor(np.full((5, 4), 0.25)))))
        if scale != 1.0:
            loss = tape.scale(loss, scale)
        return tape.backward(loss).wrt(x)

    g1, g2 = run(1.0), run(1.0)
    assert np.array_equal(g1, g2)
    np.testing.assert_allclose(run(3.5), 3.5 * g1, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_are_distributions(x):
    y = Tape().softmax(Tensor(x), axis=1).data
    assert np.all(y >= 0) and np.all(y <= 1)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(np.isfinite(y))


def test_grad_reverse_flips_sign():
    tape = Tape()
    x = Tensor([1.0, 2.0])
    y = tape.grad_reverse(x)
    assert np.array_equal(y.data, x.data)
    np.testing.assert_array_equal(tape.backward(tape.mean_all(y)).wrt(x), [-0.5, -0.5])
