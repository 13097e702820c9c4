import math

import numpy as np
import pytest

from locotron import autodiff as ad


def fd_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function of an ndarray."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / (np.linalg.norm(b) + 1e-12)


def check_grad(build, x0, tol=1e-6):
    """build(tensor) -> scalar loss tensor; compare grad vs finite differences."""
    w = ad.param(x0.copy())
    with ad.record():
        loss = build(w)
        ad.backward(loss)
    analytic = w.grad.copy()

    def f(x):
        return build(ad.const(x)).item()

    numeric = fd_grad(f, x0)
    assert rel_err(analytic, numeric) < tol, (analytic, numeric)


# ---------------------------------------------------------------------------
# matmul

def test_matmul_identity():
    x = np.array([[2.0, -1.0], [0.5, 3.0]])
    out = ad.matmul(ad.const(np.eye(2)), ad.const(x))
    assert np.array_equal(out.data, x)


def test_matmul_hand_case():
    a = ad.const([[1.0, 2.0], [3.0, 4.0]])
    b = ad.const([[1.0], [1.0]])
    out = ad.matmul(a, b)
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))


def test_matmul_grad_is_column_sums():
    # d/da sum(a @ b) broadcasts the column sums of b across rows of a
    rng = np.random.default_rng(0)
    b = rng.uniform(-2, 2, size=(4, 3))
    a0 = rng.uniform(-2, 2, size=(2, 4))

    def build(a):
        return ad.tsum(ad.matmul(a, ad.const(b)))

    w = ad.param(a0.copy())
    with ad.record():
        ad.backward(build(w))
    expected = np.tile(b.sum(axis=1), (2, 1))
    assert np.allclose(w.grad, expected, atol=1e-12)
    numeric = fd_grad(lambda x: build(ad.const(x)).item(), a0)
    assert rel_err(w.grad, numeric) < 1e-7


def test_matmul_batched_matches_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 2, 4))
    b = rng.normal(size=(3, 4, 5))
    out = ad.matmul(ad.const(a), ad.const(b))
    for i in range(3):
        assert np.allclose(out.data[i], a[i] @ b[i])


# ---------------------------------------------------------------------------
# softmax

def test_softmax_symmetry():
    out = ad.softmax_lastdim(ad.const([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_shift_invariance_no_overflow():
    out = ad.softmax_lastdim(ad.const([1000.0, 1000.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_closed_form():
    out = ad.softmax_lastdim(ad.const([0.0, math.log(3.0)]))
    assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = rng.uniform(-5, 5, size=(7, 9))
    out = ad.softmax_lastdim(ad.const(x))
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    shifted = ad.softmax_lastdim(ad.const(x + 123.0))
    assert np.allclose(out.data, shifted.data, atol=1e-12)


def test_softmax_mask_zeroes_entries():
    x = np.zeros((2, 4))
    mask = np.array([[True, True, False, False], [False, False, False, False]])
    out = ad.softmax_lastdim(ad.const(x), mask=mask)
    assert np.allclose(out.data[0], [0.5, 0.5, 0.0, 0.0])
    assert np.all(out.data[1] == 0.0)  # fully masked row stays finite


# ---------------------------------------------------------------------------
# elementwise and reductions

def test_exp_zero():
    assert ad.exp(ad.const(0.0)).item() == 1.0


def test_layer_norm_constant_vector_is_zero():
    d = 6
    out = ad.layer_norm(ad.const(np.full(d, 3.7)), ad.const(np.ones(d)), ad.const(np.zeros(d)))
    assert np.allclose(out.data, 0.0, atol=1e-12)


def test_grad_mean_of_square():
    w = ad.param(np.array([1.0, 2.0, 3.0]))
    with ad.record():
        ad.backward(ad.tmean(ad.square(w)))
    assert np.allclose(w.grad, [2 / 3, 4 / 3, 2.0], atol=1e-12)


@pytest.mark.parametrize("op,tol", [
    (lambda w: ad.tsum(ad.exp(w)), 1e-6),
    (lambda w: ad.tsum(ad.tanh(w)), 1e-6),
    (lambda w: ad.tsum(ad.square(w)), 1e-6),
    (lambda w: ad.tmean(ad.mul(w, w)), 1e-6),
    (lambda w: ad.tsum(ad.add(w, w)), 1e-6),
    (lambda w: ad.tsum(ad.sub(ad.mul(w, 2.0), w)), 1e-6),
    (lambda w: ad.tsum(ad.mul(ad.softmax_lastdim(w),
                              ad.const(np.arange(12.0).reshape(3, 4)))), 1e-6),
    (lambda w: ad.tsum(ad.square(ad.softmax_lastdim(w))), 1e-6),
    (lambda w: ad.tsum(ad.sum_lastdim(ad.square(w))), 1e-6),
    (lambda w: ad.tsum(ad.square(ad.reshape(w, (6, 2)))), 1e-6),
    (lambda w: ad.tsum(ad.square(ad.swapaxes(w, 0, 1))), 1e-6),
    (lambda w: ad.tsum(ad.square(ad.select_index(w, 1, 1))), 1e-6),
    (lambda w: ad.tsum(ad.clip(w, -0.5, 0.5)), 1e-6),
    (lambda w: ad.tsum(ad.minimum(w, ad.const(np.zeros((3, 4))))), 1e-6),
])
def test_gradcheck_elementwise(op, tol):
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-2, 2, size=(3, 4))
    check_grad(op, x0, tol=tol)


def test_gradcheck_relu_away_from_kink():
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-2, 2, size=(3, 4))
    x0[np.abs(x0) < 1e-3] = 0.5  # keep FD away from the nondifferentiable point
    check_grad(lambda w: ad.tsum(ad.relu(w)), x0)


def test_gradcheck_matmul_both_sides():
    rng = np.random.default_rng(5)
    a0 = rng.uniform(-2, 2, size=(3, 4))
    b0 = rng.uniform(-2, 2, size=(4, 2))
    check_grad(lambda w: ad.tsum(ad.square(ad.matmul(w, ad.const(b0)))), a0)
    check_grad(lambda w: ad.tsum(ad.square(ad.matmul(ad.const(a0), w))), b0)


def test_gradcheck_rowvec_ops():
    rng = np.random.default_rng(6)
    x0 = rng.uniform(-2, 2, size=(5, 3))
    v0 = rng.uniform(-2, 2, size=3)
    check_grad(lambda w: ad.tsum(ad.square(ad.add_rowvec(w, ad.const(v0)))), x0)
    check_grad(lambda w: ad.tsum(ad.square(ad.add_rowvec(ad.const(x0), w))), v0)
    check_grad(lambda w: ad.tsum(ad.square(ad.mul_rowvec(w, ad.const(v0)))), x0)
    check_grad(lambda w: ad.tsum(ad.square(ad.mul_rowvec(ad.const(x0), w))), v0)


def test_gradcheck_layer_norm_all_inputs():
    rng = np.random.default_rng(7)
    x0 = rng.uniform(-2, 2, size=(4, 6))
    g0 = rng.uniform(0.5, 1.5, size=6)
    b0 = rng.uniform(-0.5, 0.5, size=6)
    check_grad(lambda w: ad.tsum(ad.square(
        ad.layer_norm(w, ad.const(g0), ad.const(b0)))), x0, tol=1e-5)
    check_grad(lambda w: ad.tsum(ad.square(
        ad.layer_norm(ad.const(x0), w, ad.const(b0)))), g0)
    check_grad(lambda w: ad.tsum(ad.square(
        ad.layer_norm(ad.const(x0), ad.const(g0), w))), b0)


# ---------------------------------------------------------------------------
# backward mechanics

def test_backward_sum_gives_ones():
    w = ad.param(np.array([1.0, -2.0, 3.0]))
    with ad.record():
        ad.backward(ad.tsum(w))
    assert np.array_equal(w.grad, np.ones(3))


def test_backward_sum_of_square():
    w = ad.param(np.array([3.0]))
    with ad.record():
        ad.backward(ad.tsum(ad.mul(w, w)))
    assert np.allclose(w.grad, [6.0])


def test_backward_accumulates_across_uses():
    # w appears twice linearly -> gradient is 2x the single-use gradient
    w = ad.param(np.array([1.0, 2.0]))
    with ad.record():
        ad.backward(ad.tsum(ad.add(w, w)))
    double_use = w.grad.copy()

    w2 = ad.param(np.array([1.0, 2.0]))
    with ad.record():
        ad.backward(ad.tsum(w2))
    assert np.allclose(double_use, 2.0 * w2.grad)


def test_backward_requires_scalar_loss():
    w = ad.param(np.ones(3))
    with ad.record():
        out = ad.square(w)
        with pytest.raises(ad.GraphError):
            ad.backward(out)


def test_backward_on_detached_tensor_errors():
    with pytest.raises(ad.GraphError):
        ad.backward(ad.const(1.0))


def test_backward_twice_errors():
    w = ad.param(np.ones(2))
    with ad.record():
        loss = ad.tsum(w)
        ad.backward(loss)
        with pytest.raises(ad.GraphError):
            ad.backward(loss)


def test_no_recording_outside_graph():
    w = ad.param(np.ones(2))
    out = ad.tsum(w)
    assert out.graph is None
    with pytest.raises(ad.GraphError):
        ad.backward(out)


# ---------------------------------------------------------------------------
# AdamW

def test_adamw_zero_grad_no_decay_is_identity():
    p = ad.param(np.array([1.0, -2.0]))
    opt = ad.AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_bias_corrected():
    # g=1, lr=0.1, wd=0: mhat=1, vhat=1 -> delta = -0.1 / (1 + eps)
    p = ad.param(np.array([0.5]))
    opt = ad.AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    assert abs((p.data[0] - 0.5) + 0.1) < 1e-8


def test_adamw_decay_only():
    # paper-profile lr and weight decay: pure decay scales by (1 - lr*wd)
    p = ad.param(np.array([2.0]))
    opt = ad.AdamW({"p": p}, lr=5e-4, weight_decay=0.01)
    p.grad = np.array([0.0])
    opt.step()
    assert np.allclose(p.data, 2.0 * (1.0 - 5e-6), rtol=0, atol=1e-15)


def test_adamw_nan_grad_aborts():
    p = ad.param(np.array([1.0]))
    opt = ad.AdamW({"p": p}, lr=1e-3)
    p.grad = np.array([np.nan])
    with pytest.raises(ad.GradientError):
        opt.step()


def test_adamw_state_roundtrip():
    p = ad.param(np.array([1.0, 2.0]))
    opt = ad.AdamW({"p": p}, lr=1e-2)
    p.grad = np.array([0.3, -0.7])
    opt.step()
    state = opt.state_dict()
    p2 = ad.param(np.array([1.0, 2.0]))
    opt2 = ad.AdamW({"p": p2}, lr=1e-2)
    opt2.load_state_dict(state)
    assert opt2.step_count == 1
    assert np.array_equal(opt2.m["p"], opt.m["p"])
    assert np.array_equal(opt2.v["p"], opt.v["p"])
