import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgdk import critic as cr
from pgdk import koopman, neural
from pgdk.diagnostics import finite_diff_grad, relative_error
from pgdk.errors import InvalidInput, NumericalDivergence


def linear_critic(w, gamma=0.99):
    w = np.asarray(w, dtype=np.float64)
    return cr.Critic(neural.MlpSpec((w.size, 1)), np.concatenate([w, [0.0]]), gamma)


def random_critic(n, seed, gamma=0.9):
    c = cr.make_critic(n, hidden=(8, 8), gamma=gamma, seed=seed, zero_output=False)
    rng = np.random.default_rng(seed)
    return cr.Critic(c.spec, c.theta_J + 0.1 * rng.normal(size=c.theta_J.size), gamma)


def random_batch(rng, n, N, m=1):
    return koopman.DataBatch(rng.normal(size=(n, N)), rng.normal(size=(n, N)),
                             rng.normal(size=(m, N)), rng.uniform(0, 2, N))


def test_zero_critic_is_zero():
    c = cr.make_critic(3, zero_output=True)
    assert cr.value(c, [1.0, -2.0, 5.0]) == 0.0
    np.testing.assert_array_equal(cr.value_grad_x(c, [1.0, 2.0, 3.0]), 0.0)


def test_linear_critic_value_and_gradient():
    c = linear_critic([2.0, 0.0])
    assert cr.value(c, [3.0, 5.0]) == 6.0
    for x in ([0.0, 0.0], [1.0, -4.0]):
        np.testing.assert_array_equal(cr.value_grad_x(c, x), [2.0, 0.0])


def test_value_delegates_to_forward():
    c = random_critic(3, 1)
    x = np.array([0.2, -0.3, 0.9])
    assert cr.value(c, x) == neural.forward(c.spec, c.theta_J, x)[0]


def test_value_dimension_mismatch():
    with pytest.raises(InvalidInput):
        cr.value(linear_critic([1.0, 1.0]), [1.0, 2.0, 3.0])


def test_gamma_validation():
    with pytest.raises(InvalidInput):
        linear_critic([1.0], gamma=1.5)


def test_value_grad_x_finite_differences():
    c = random_critic(3, 2)
    x = np.array([0.4, -0.1, 0.3])
    fd = finite_diff_grad(lambda z: cr.value(c, z), x)
    assert relative_error(cr.value_grad_x(c, x), fd)[0] < 1e-5


def test_td_loss_zero_case():
    rng = np.random.default_rng(0)
    b = random_batch(rng, 2, 8)
    b = koopman.DataBatch(b.X, b.Xbar, b.U, np.zeros(8))
    c = cr.make_critic(2)
    assert cr.td_loss(c, b) == 0.0
    assert not cr.grad_td(c, b).any()


def test_td_loss_constant_critic_telescopes():
    rng = np.random.default_rng(1)
    b = random_batch(rng, 2, 10)
    spec = neural.MlpSpec((2, 1))
    c = cr.Critic(spec, np.array([0.0, 0.0, 3.7]), gamma=1.0)
    assert abs(cr.td_loss(c, b) - np.mean(b.costs ** 2)) < 1e-12


def test_td_loss_matches_per_sample_recomputation():
    rng = np.random.default_rng(2)
    c = random_critic(2, 3)
    b = random_batch(rng, 2, 12)
    total = 0.0
    for k in range(b.N):
        d = b.costs[k] + c.gamma * cr.value(c, b.Xbar[:, k]) - cr.value(c, b.X[:, k])
        total += d * d
    assert abs(cr.td_loss(c, b) - total / b.N) < 1e-12


def test_gamma_zero_reduces_to_regression_gradient():
    rng = np.random.default_rng(3)
    c = random_critic(2, 4, gamma=0.0)
    b = random_batch(rng, 2, 9)
    d = cr.td_errors(c, b)
    expected = np.zeros_like(c.theta_J)
    for k in range(b.N):
        expected += neural.vjp(c.spec, c.theta_J, b.X[:, k], [1.0])[0] * d[k]
    expected *= -2.0 / b.N
    np.testing.assert_allclose(cr.grad_td(c, b), expected, rtol=1e-10, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 4), N=st.integers(1, 32), gamma=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_grad_td_finite_differences(n, N, gamma, seed):
    rng = np.random.default_rng(seed)
    c = random_critic(n, seed % 997, gamma)
    b = random_batch(rng, n, N)
    fd = finite_diff_grad(lambda th: cr.td_loss(cr.Critic(c.spec, th, gamma), b), c.theta_J)
    assert relative_error(cr.grad_td(c, b), fd)[0] < 1e-4
    assert cr.td_loss(c, b) >= 0.0


def test_td_loss_decreases_under_small_steps():
    rng = np.random.default_rng(4)
    c = random_critic(2, 5)
    b = random_batch(rng, 2, 16)
    losses = [cr.td_loss(c, b)]
    step = 0.05
    for _ in range(50):
        loss, g = cr.loss_and_grad_td(c, b)
        while True:  # backtracking keeps every step a descent step
            trial = cr.update_critic(c, g, step)
            if cr.td_loss(trial, b) <= loss:
                break
            step *= 0.5
        c = trial
        losses.append(cr.td_loss(c, b))
    assert all(b2 <= a for a, b2 in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_update_rejects_nonfinite():
    c = linear_critic([1.0])
    with pytest.raises(NumericalDivergence):
        cr.update_critic(c, [np.nan, 0.0], 0.1)
