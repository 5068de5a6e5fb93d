"""Per-operation gradient checks of the reverse-accumulation engine
against central finite differences."""
import numpy as np
import pytest

from diffgda import autodiff as ad
from diffgda.autodiff import Adam, Tensor
from diffgda.layers import finite_diff_grad, max_rel_error

STEP = 1e-6
TOL = 1e-7


def check_op(build, *shapes, seed=0):
    """build(*tensors) -> scalar Tensor; compare grads to finite differences."""
    rng = np.random.default_rng(seed)
    params = [Tensor(rng.standard_normal(s)) for s in shapes]
    out = build(*params)
    out.backward()
    analytic = [p.grad.copy() for p in params]
    numeric = finite_diff_grad(lambda: build(*params).item(), params, STEP)
    assert max_rel_error(analytic, numeric) < TOL


def test_add_broadcast():
    check_op(lambda a, b: ad.tsum(ad.square(ad.add(a, b))), (3, 4), (4,))


def test_mul_broadcast():
    check_op(lambda a, b: ad.tsum(ad.square(ad.multiply(a, b))), (3, 4), (3, 1))


def test_matmul():
    check_op(lambda a, b: ad.tsum(ad.square(ad.matmul(a, b))), (3, 4), (4, 2))


def test_matmul_const_left():
    const = np.arange(6.0).reshape(2, 3)
    check_op(lambda b: ad.tsum(ad.square(ad.matmul(const, b))), (3, 2))


def test_transpose_reshape():
    check_op(lambda a: ad.tsum(ad.square(ad.reshape(ad.transpose(a), (8,)))), (2, 4))


def test_exp_log_sqrt():
    rng = np.random.default_rng(3)
    p = Tensor(rng.uniform(0.5, 2.0, size=(5,)))
    build = lambda: ad.tsum(ad.log(ad.sqrt(ad.exp(p)))).item()
    out = ad.tsum(ad.log(ad.sqrt(ad.exp(p))))
    out.backward()
    numeric = finite_diff_grad(build, [p], STEP)
    assert max_rel_error([p.grad], numeric) < TOL


def test_sigmoid_softplus():
    check_op(lambda a: ad.tsum(ad.multiply(ad.sigmoid(a), ad.softplus(a))), (6,))


def test_relu_at_safe_points():
    rng = np.random.default_rng(5)
    vals = rng.standard_normal((4, 3))
    vals[np.abs(vals) < 1e-2] = 0.5  # keep clear of the kink
    p = Tensor(vals)
    out = ad.tsum(ad.square(ad.relu(p)))
    out.backward()
    numeric = finite_diff_grad(lambda: ad.tsum(ad.square(ad.relu(p))).item(), [p], STEP)
    assert max_rel_error([p.grad], numeric) < TOL


def test_mean_axis():
    check_op(lambda a: ad.tsum(ad.square(ad.tmean(a, axis=0))), (4, 3))


def test_sum_keepdims():
    check_op(lambda a: ad.tsum(ad.square(ad.tsum(a, axis=1, keepdims=True))), (4, 3))


def test_concat():
    check_op(lambda a, b: ad.tsum(ad.square(ad.concat([a, b], axis=1))),
             (3, 2), (3, 4))


def test_concat_with_constant():
    const = np.ones((3, 1))
    check_op(lambda a: ad.tsum(ad.square(ad.concat([a, const], axis=1))), (3, 2))


def test_getitem_rows():
    idx = np.array([0, 2, 2])  # duplicate index accumulates
    check_op(lambda a: ad.tsum(ad.square(a[idx])), (4, 3))


def test_getitem_pairs():
    iu = np.array([0, 1])
    iv = np.array([2, 0])
    check_op(lambda a: ad.tsum(ad.square(a[(iu, iv)])), (3, 3))


def test_getitem_slice():
    check_op(lambda a: ad.tsum(ad.square(a[:, 1:3])), (4, 5))


def test_power():
    rng = np.random.default_rng(11)
    p = Tensor(rng.uniform(0.5, 1.5, size=(4,)))
    out = ad.tsum(ad.power(p, 3.0))
    out.backward()
    numeric = finite_diff_grad(lambda: ad.tsum(ad.power(p, 3.0)).item(), [p], STEP)
    assert max_rel_error([p.grad], numeric) < TOL


def test_masked_softmax_grad():
    mask = np.array([[True, True, False],
                     [True, True, True],
                     [False, True, True]])
    check_op(lambda a: ad.tsum(ad.square(ad.masked_softmax(a, mask))), (3, 3))


def test_masked_softmax_rows():
    mask = np.array([[True, False, True],
                     [False, False, False],
                     [True, True, True]])
    x = Tensor(np.arange(9.0).reshape(3, 3))
    out = ad.masked_softmax(x, mask).value
    assert np.allclose(out[0].sum(), 1.0)
    assert np.all(out[1] == 0.0)
    assert np.allclose(out[2].sum(), 1.0)
    assert out[0, 1] == 0.0


def test_shared_node_accumulates():
    p = Tensor(np.array([2.0]))
    y = ad.add(ad.square(p), ad.square(p))  # d/dp = 8
    y.backward()
    assert np.allclose(p.grad, 8.0)


def test_operator_overloads():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([3.0, 4.0]))
    out = ad.tsum((a + b) * 2.0 - a / 2.0 + (-b) + a @ b)
    # elementwise [8,12] - [0.5,1] - [3,4] + dot 11 broadcast over both entries
    assert np.isclose(out.item(), (8.0 + 12.0) - 1.5 - 7.0 + 2 * 11.0)


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([5.0, -3.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        loss = ad.tsum(ad.square(p))
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert np.abs(p.value).max() < 1e-3


def test_backward_on_deep_chain():
    p = Tensor(np.array([1.0]))
    h = p
    for _ in range(2000):
        h = ad.add(h, 1.0)
    h.backward()
    assert np.allclose(p.grad, 1.0)


def test_finite_diff_errors_on_bad_step():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda: 0.0, [Tensor(np.zeros(1))], 0.0)
