"""State-value approximation trained on the mean squared TD error.

The gradient is the full residual gradient: both ``J(x_k)`` and the bootstrap
term ``gamma * J(x_{k+1})`` are differentiated. Classical semi-gradient TD(0)
drops the second term; it is kept here.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import neural
from .errors import InvalidInput, NumericalDivergence


@dataclass
class Critic:
    spec: neural.MlpSpec
    theta_J: np.ndarray
    gamma: float = 0.99

    def __post_init__(self):
        if self.spec.n_out != 1 or self.spec.output != "identity":
            raise InvalidInput("critic needs a single identity output")
        # gamma = 0 is allowed here (pure one-step regression); training configs require gamma > 0
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInput(f"gamma must lie in [0, 1], got {self.gamma}")


def make_critic(n, hidden=(64, 64), gamma=0.99, seed=0, zero_output=True):
    """Tanh critic; with ``zero_output`` it starts as ``J == 0`` (flat, so no spurious policy signal)."""
    spec = neural.MlpSpec((n, *hidden, 1))
    theta = neural.init_params(spec, seed)
    if zero_output:
        w_sl, _, _ = list(spec.layer_slices())[-1]
        theta[w_sl] = 0.0
    return Critic(spec, theta, gamma)


def value(critic, x):
    return float(neural.forward(critic.spec, critic.theta_J, x)[0])


def values(critic, X):
    return neural.forward_batch(critic.spec, critic.theta_J, X)[0]


def _check_batch(critic, batch):
    if batch.n != critic.spec.n_in:
        raise InvalidInput(f"batch state dim {batch.n} != critic input {critic.spec.n_in}")


def td_errors(critic, batch):
    _check_batch(critic, batch)
    return batch.costs + critic.gamma * values(critic, batch.Xbar) - values(critic, batch.X)


def td_loss(critic, batch):
    d = td_errors(critic, batch)
    return float(np.mean(d * d))


def loss_and_grad_td(critic, batch):
    _check_batch(critic, batch)
    spec, theta = critic.spec, critic.theta_J
    tape_x = neural.forward_tape(spec, theta, batch.X)
    tape_xn = neural.forward_tape(spec, theta, batch.Xbar)
    v = neural.output_of(spec, tape_x)[0]
    vn = neural.output_of(spec, tape_xn)[0]
    d = batch.costs + critic.gamma * vn - v
    w = (2.0 / batch.N) * d
    g_next = neural.vjp_tape(spec, theta, tape_xn, (critic.gamma * w)[None, :])[0]
    g_curr = neural.vjp_tape(spec, theta, tape_x, (-w)[None, :])[0]
    return float(np.mean(d * d)), g_next + g_curr


def grad_td(critic, batch):
    return loss_and_grad_td(critic, batch)[1]


def value_grad_x_batch(critic, X):
    N = np.asarray(X).shape[1]
    return neural.vjp_batch(critic.spec, critic.theta_J, X, np.ones((1, N)))[1]


def value_grad_x(critic, x):
    return neural.vjp(critic.spec, critic.theta_J, x, np.ones(1))[1]


def update_critic(critic, grad, step):
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NumericalDivergence("critic gradient (L3)")
    return replace(critic, theta_J=critic.theta_J - step * grad)
