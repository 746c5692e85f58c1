import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgdk.diagnostics import finite_diff_grad
from pgdk.envs import ENVIRONMENTS, lqr_oracle, make_env, wrap_angle
from pgdk.errors import ConfigError, EnvDiverged, OracleDiverged


def test_pendulum_upright_is_fixed_point():
    env = make_env("pendulum")
    x, c = env.step([0.0, 0.0], [0.0])
    np.testing.assert_array_equal(x, [0.0, 0.0])
    assert c == 0.0


def test_pendulum_downward_is_fixed_point():
    env = make_env("pendulum")
    x, _ = env.step([math.pi, 0.0], [0.0])
    np.testing.assert_array_equal(x, [math.pi, 0.0])


def test_pendulum_hand_step():
    x, _ = make_env("pendulum").step([math.pi / 2, 0.0], [0.0])
    assert abs(x[1] - 0.75) < 1e-12
    assert abs(x[0] - (math.pi / 2 + 0.0375)) < 1e-12


def test_double_integrator_step():
    x, _ = make_env("double_integrator").step([0.0, 1.0], [0.0])
    np.testing.assert_allclose(x, [0.1, 1.0], rtol=0, atol=1e-15)


def test_actions_are_clipped():
    env = make_env("double_integrator", u_max=2.0)
    x, c = env.step([0.0, 0.0], [50.0])
    assert x[1] == pytest.approx(0.2)
    assert c == pytest.approx(0.01 * 4.0)


@pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
def test_reset_is_seeded(name):
    env = make_env(name)
    np.testing.assert_array_equal(env.reset(5), env.reset(5))
    assert env.reset(5).shape == (env.spec.n,)


def test_unknown_env_and_param():
    with pytest.raises(ConfigError):
        make_env("lunar_lander")
    with pytest.raises(ConfigError):
        make_env("pendulum", friction=0.1)


def test_nonfinite_state_raises():
    with pytest.raises(EnvDiverged):
        make_env("double_integrator").step([np.inf, 0.0], [0.0])


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle([math.pi, -math.pi, 3 * math.pi, 0.5]), [math.pi, math.pi, math.pi, 0.5])


@settings(max_examples=50, deadline=None)
@given(name=st.sampled_from(sorted(ENVIRONMENTS)), seed=st.integers(0, 2**31))
def test_cost_nonnegative_and_gradient(name, seed):
    env = make_env(name)
    rng = np.random.default_rng(seed)
    x = 5.0 * rng.normal(size=env.spec.n)
    u = 5.0 * rng.normal(size=env.spec.m)
    assert env.cost.cost(x, u) >= 0.0
    fd = finite_diff_grad(lambda v: float(env.cost.cost(x, v)), u)
    assert np.max(np.abs(fd - env.cost.cost_grad_u(x, u))) < 1e-6


def test_lqr_one_step_problem():
    K, P = lqr_oracle(np.zeros((2, 2)), np.ones((2, 1)), np.eye(2), np.eye(1), 0.99)
    np.testing.assert_allclose(P, np.eye(2), atol=1e-12)


def test_lqr_uncontrolled_scalar():
    K, P = lqr_oracle([[0.5]], [[0.0]], [[1.0]], [[1.0]], 1.0)
    assert abs(P[0, 0] - 4.0 / 3.0) < 1e-10


def test_lqr_double_integrator_regression():
    env = make_env("double_integrator")
    K, P = lqr_oracle(*env.linear_model(), 0.99)
    np.testing.assert_allclose(P, P.T, rtol=0, atol=0)
    assert np.all(np.linalg.eigvalsh(P) > 0)
    np.testing.assert_allclose(K, [[7.399799104978, 4.891136973949]], rtol=1e-9)
    np.testing.assert_allclose(P, [[6.379727771656, 1.277952687663],
                                   [1.277952687663, 0.716908966161]], rtol=1e-9)


def test_lqr_rollout_matches_value():
    env = make_env("double_integrator")
    gamma = 0.99
    K, P = lqr_oracle(*env.linear_model(), gamma)
    x = np.array([1.0, 0.0])
    total = 0.0
    for k in range(200):
        x, c = env.step(x, -K @ x)
        total += gamma ** k * c
    assert abs(total - P[0, 0]) <= 0.02 * P[0, 0]


def test_lqr_nonconvergence():
    with pytest.raises(OracleDiverged):
        lqr_oracle([[2.0]], [[0.0]], [[1.0]], [[1.0]], 1.0, iters=50)
