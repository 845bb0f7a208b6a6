"""Kernel checks against loop oracles and finite differences."""

import numpy as np
import pytest

from warplab import kernels as K
from warplab.errors import ContractError
from warplab.rng import RngStream

from .oracles import conv2d_ref, dyadic, fd_grad, max_rel_err


def rand(rng, shape, scale=1.0):
    return (rng.uniform(shape, -scale, scale)).astype(np.float64)


# ---------------------------------------------------------------- conv2d

def test_conv2d_exact_on_dyadic_grid():
    # On inputs that are multiples of 2^-7 every f32 summation order is
    # exact, so the BLAS path must agree with the 6-loop oracle bitwise.
    rng = RngStream(100)
    x = dyadic(rng, (2, 3, 8, 8))
    w = dyadic(rng, (4, 3, 3, 3))
    b = dyadic(rng, (4,))
    got = K.conv2d(x, w, b, stride=1, pad=1)
    want = conv2d_ref(x, w, b, stride=1, pad=1)
    assert got.dtype == np.float32
    assert np.array_equal(got, want)


def test_conv2d_exact_on_dyadic_grid_stride2_nopad():
    rng = RngStream(101)
    x = dyadic(rng, (2, 2, 9, 9))
    w = dyadic(rng, (3, 2, 3, 3))
    got = K.conv2d(x, w, None, stride=2, pad=0)
    assert got.shape == (2, 3, 4, 4)
    assert np.array_equal(got, conv2d_ref(x, w, None, stride=2, pad=0))


def test_conv2d_float32_continuous_close_to_oracle():
    rng = RngStream(102)
    x = rand(rng, (2, 3, 10, 10)).astype(np.float32)
    w = rand(rng, (5, 3, 3, 3)).astype(np.float32)
    b = rand(rng, (5,)).astype(np.float32)
    got = K.conv2d(x, w, b, pad=1)
    assert max_rel_err(got, conv2d_ref(x, w, b, pad=1)) < 1e-5


def test_conv2d_float64_matches_oracle_tight():
    rng = RngStream(103)
    x = rand(rng, (1, 2, 6, 7))
    w = rand(rng, (3, 2, 3, 3))
    got = K.conv2d(x, w, None, pad=1)
    assert max_rel_err(got, conv2d_ref(x, w, None, pad=1)) < 1e-12


def test_conv2d_identity_kernel_preserves_input():
    rng = RngStream(104)
    x = rand(rng, (2, 3, 6, 6)).astype(np.float32)
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    assert np.allclose(K.conv2d(x, w, None, pad=1), x, atol=1e-7)


def test_conv2d_shape_contracts():
    x = np.zeros((1, 3, 8, 8), dtype=np.float32)
    with pytest.raises(ContractError):
        K.conv2d(x, np.zeros((4, 2, 3, 3), dtype=np.float32))
    with pytest.raises(ContractError):
        K.conv2d(x, np.zeros((4, 3, 9, 9), dtype=np.float32), pad=0)
    with pytest.raises(ContractError):
        K.conv2d(np.zeros((3, 8, 8), dtype=np.float32), np.zeros((4, 3, 3, 3), dtype=np.float32))


def test_conv2d_grads_match_finite_differences():
    rng = RngStream(105)
    x = rand(rng, (2, 2, 6, 6))
    w = rand(rng, (3, 2, 3, 3))
    b = rand(rng, (3,))
    gy = rand(rng, (2, 3, 6, 6))

    def loss_of(xv=x, wv=w, bv=b):
        return float((K.conv2d(xv, wv, bv, pad=1) * gy).sum())

    dx, dw, db = K.conv2d_bwd(x, w, gy, pad=1)
    assert max_rel_err(dx, fd_grad(lambda v: loss_of(xv=v), x)) < 1e-6
    assert max_rel_err(dw, fd_grad(lambda v: loss_of(wv=v), w)) < 1e-6
    assert max_rel_err(db, fd_grad(lambda v: loss_of(bv=v), b)) < 1e-6


def test_conv2d_bwd_stride2():
    rng = RngStream(106)
    x = rand(rng, (1, 2, 8, 8))
    w = rand(rng, (2, 2, 3, 3))
    gy = rand(rng, (1, 2, 3, 3))
    dx, dw, _ = K.conv2d_bwd(x, w, gy, stride=2, pad=0)
    want_dx = fd_grad(lambda v: float((K.conv2d(v, w, None, stride=2) * gy).sum()), x)
    want_dw = fd_grad(lambda v: float((K.conv2d(x, v, None, stride=2) * gy).sum()), w)
    assert max_rel_err(dx, want_dx) < 1e-6
    assert max_rel_err(dw, want_dw) < 1e-6


def test_conv2d_bit_deterministic_across_calls():
    rng = RngStream(107)
    x = rand(rng, (4, 3, 16, 16)).astype(np.float32)
    w = rand(rng, (8, 3, 3, 3)).astype(np.float32)
    a = K.conv2d(x, w, None, pad=1)
    b = K.conv2d(x.copy(), w.copy(), None, pad=1)
    assert np.array_equal(a, b)


# ------------------------------------------------------- relu / pooling

def test_relu_and_backward():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
    assert np.array_equal(K.relu(x), [0, 0, 0, 0.5, 3.0])
    gy = np.ones_like(x)
    # subgradient at 0 is 0
    assert np.array_equal(K.relu_bwd(x, gy), [0, 0, 0, 1, 1])


def test_relu_grad_matches_fd_away_from_kink():
    rng = RngStream(108)
    x = rand(rng, (40,))
    x = np.where(np.abs(x) < 0.05, 0.1, x)  # keep FD away from the kink
    gy = rand(rng, (40,))
    got = K.relu_bwd(x, gy)
    want = fd_grad(lambda v: float((K.relu(v) * gy).sum()), x, h=1e-4)
    assert max_rel_err(got, want) < 1e-6


def test_maxpool2_forward_against_loops():
    rng = RngStream(109)
    x = rand(rng, (2, 3, 6, 8))
    y, _ = K.maxpool2(x)
    for n in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(4):
                    assert y[n, c, i, j] == x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()


def test_maxpool2_tie_break_is_first_slot():
    x = np.zeros((1, 1, 2, 2))
    y, idx = K.maxpool2(x)
    assert y[0, 0, 0, 0] == 0 and idx[0, 0, 0, 0] == 0
    g = K.maxpool2_bwd(idx, np.ones((1, 1, 1, 1)))
    assert np.array_equal(g[0, 0], [[1, 0], [0, 0]])


def test_maxpool2_grad_matches_fd():
    rng = RngStream(110)
    x = rand(rng, (2, 2, 4, 4))
    gy = rand(rng, (2, 2, 2, 2))
    _, idx = K.maxpool2(x)
    got = K.maxpool2_bwd(idx, gy)
    want = fd_grad(lambda v: float((K.maxpool2(v)[0] * gy).sum()), x, h=1e-6)
    assert max_rel_err(got, want) < 1e-6


def test_maxpool2_odd_input_rejected():
    with pytest.raises(ContractError):
        K.maxpool2(np.zeros((1, 1, 5, 4)))


def test_global_avg_pool_and_backward():
    rng = RngStream(111)
    x = rand(rng, (2, 3, 4, 4))
    assert np.allclose(K.global_avg_pool(x), x.mean(axis=(2, 3)))
    gy = rand(rng, (2, 3))
    got = K.global_avg_pool_bwd(gy, 4, 4)
    want = fd_grad(lambda v: float((K.global_avg_pool(v) * gy).sum()), x)
    assert max_rel_err(got, want) < 1e-9


# ------------------------------------------------------ linear / losses

def test_linear_and_grads():
    rng = RngStream(112)
    x = rand(rng, (4, 6))
    w = rand(rng, (6, 3))
    b = rand(rng, (3,))
    gy = rand(rng, (4, 3))
    assert np.allclose(K.linear(x, w, b), x @ w + b)
    dx, dw, db = K.linear_bwd(x, w, gy)
    assert max_rel_err(dx, fd_grad(lambda v: float((K.linear(v, w, b) * gy).sum()), x)) < 1e-8
    assert max_rel_err(dw, fd_grad(lambda v: float((K.linear(x, v, b) * gy).sum()), w)) < 1e-8
    assert max_rel_err(db, fd_grad(lambda v: float((K.linear(x, w, v) * gy).sum()), b)) < 1e-8


def test_softmax_xent_frozen_values():
    # two classes, zero logits: loss is ln 2 exactly
    loss, _ = K.softmax_xent(np.zeros((2, 2)), np.array([0, 1]))
    assert abs(loss - np.log(2.0)) < 1e-12
    # hand value: lse(1,2,3) - 3 = ln(1 + e^-1 + e^-2)
    loss, _ = K.softmax_xent(np.array([[1.0, 2.0, 3.0]]), np.array([2]))
    assert abs(loss - 0.40760596444438079) < 1e-12


def test_softmax_xent_uniform_logits_give_log_k():
    for k in (2, 7, 10):
        loss, d = K.softmax_xent(np.zeros((5, k)), np.arange(5) % k)
        assert abs(loss - np.log(k)) < 1e-12
        assert np.allclose(d.sum(axis=1), 0.0, atol=1e-12)


def test_softmax_xent_grad_matches_fd():
    rng = RngStream(113)
    logits = rand(rng, (5, 4), scale=2.0)
    labels = np.array([0, 3, 1, 1, 2])
    _, d = K.softmax_xent(logits, labels)
    want = fd_grad(lambda v: K.softmax_xent(v, labels)[0], logits, h=1e-5)
    assert max_rel_err(d, want) < 1e-8
    assert np.allclose(d.sum(axis=1), 0.0, atol=1e-12)


def test_softmax_xent_label_contract():
    with pytest.raises(ContractError):
        K.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ContractError):
        K.softmax_xent(np.zeros((2, 3)), np.array([0, -1]))


def test_softmax_rows_sum_to_one():
    rng = RngStream(114)
    p = K.softmax(rand(rng, (6, 9), scale=5.0))
    assert np.allclose(p.sum(axis=1), 1.0)
    assert p.min() > 0


# -------------------------------------------------------------- sgd

def test_sgd_two_step_recurrence_hand_values():
    # theta0=1, g=0.5 each step, lr=0.1, mu=0.9, wd=0:
    #   v1=0.5        theta1 = 1 - 0.05  = 0.95
    #   v2=0.95       theta2 = 0.95 - 0.095 = 0.855
    th = np.array([1.0])
    v = np.zeros(1)
    K.sgd_step(th, np.array([0.5]), v, lr=0.1, momentum=0.9)
    assert abs(th[0] - 0.95) < 1e-12
    K.sgd_step(th, np.array([0.5]), v, lr=0.1, momentum=0.9)
    assert abs(th[0] - 0.855) < 1e-12


def test_sgd_weight_decay_hand_values():
    # wd=0.1: g1 = 0.5 + 0.1*1 = 0.6 -> theta = 0.94
    #         g2 = 0.5 + 0.094 = 0.594, v = 0.54 + 0.594 = 1.134 -> theta = 0.8266
    th = np.array([1.0])
    v = np.zeros(1)
    K.sgd_step(th, np.array([0.5]), v, lr=0.1, momentum=0.9, weight_decay=0.1)
    assert abs(th[0] - 0.94) < 1e-12
    K.sgd_step(th, np.array([0.5]), v, lr=0.1, momentum=0.9, weight_decay=0.1)
    assert abs(th[0] - 0.8266) < 1e-12


def test_sgd_no_momentum_is_plain_descent():
    rng = RngStream(115)
    th = rand(rng, (10,))
    g = rand(rng, (10,))
    want = th - 0.05 * g
    v = np.zeros(10)
    K.sgd_step(th, g, v, lr=0.05)
    assert np.allclose(th, want, atol=1e-15)
