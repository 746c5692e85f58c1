"""Deterministic policy and its model-based policy gradient.

The surrogate loss scores each replayed state by the stage cost of the
current policy's action plus the discounted critic value at the one-step
Koopman prediction::

    L2 = mean_k [ c(x_k, mu(x_k)) + gamma * J(C (A g(x_k) + B mu(x_k))) ]

Since the predictor is affine in ``u``, ``d xhat / d u = C B`` and the policy
gradient needs only ``dc/du``, ``dJ/dx`` at the prediction and a reverse pass
through the policy network.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import critic as critic_mod
from . import koopman, neural
from .errors import InvalidInput, NumericalDivergence


@dataclass
class Actor:
    spec: neural.MlpSpec
    theta_mu: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        m = self.spec.n_out
        self.action_low = np.broadcast_to(np.asarray(self.action_low, dtype=np.float64), (m,)).copy()
        self.action_high = np.broadcast_to(np.asarray(self.action_high, dtype=np.float64), (m,)).copy()
        if not np.all(self.action_low < self.action_high):
            raise InvalidInput("action_low must be below action_high componentwise")
        if self.spec.output == "scaled_tanh":
            half = 0.5 * (self.action_high - self.action_low)
            if not np.allclose(half, self.spec.bound, rtol=1e-12, atol=0.0):
                raise InvalidInput(
                    f"output bound {self.spec.bound} does not match action half-range {half}"
                )

    @property
    def center(self):
        if self.spec.output != "scaled_tanh":
            return np.zeros(self.spec.n_out)
        return 0.5 * (self.action_high + self.action_low)


def make_actor(n, action_low, action_high, hidden=(32,), seed=0, zero_output=True):
    """Scaled-tanh policy over the action box.

    With ``zero_output`` the last layer starts at zero, so the initial policy
    outputs the box centre everywhere; its gradient is still nonzero.
    """
    low = np.atleast_1d(np.asarray(action_low, dtype=np.float64))
    high = np.atleast_1d(np.asarray(action_high, dtype=np.float64))
    half = 0.5 * (high - low)
    if not np.allclose(half, half[0]):
        raise InvalidInput("a single scaled_tanh head needs equal half-ranges on every input")
    spec = neural.MlpSpec((n, *hidden, low.shape[0]), output="scaled_tanh", bound=float(half[0]))
    theta = neural.init_params(spec, seed)
    if zero_output:
        w_sl, _, _ = list(spec.layer_slices())[-1]
        theta[w_sl] = 0.0
    return Actor(spec, theta, low, high)


def act_batch(actor, X):
    return neural.forward_batch(actor.spec, actor.theta_mu, X) + actor.center[:, None]


def act(actor, x):
    return neural.forward(actor.spec, actor.theta_mu, x) + actor.center


def _check(actor, critic, model, batch):
    n, m = batch.n, batch.m
    if actor.spec.n_in != n or actor.spec.n_out != m:
        raise InvalidInput("actor dimensions do not match the batch")
    if critic.spec.n_in != n:
        raise InvalidInput("critic dimensions do not match the batch")
    if model.n != n or model.m != m:
        raise InvalidInput("Koopman model dimensions do not match the batch")


def _policy_terms(actor, model, batch):
    tape_u = neural.forward_tape(actor.spec, actor.theta_mu, batch.X)
    U = neural.output_of(actor.spec, tape_u) + actor.center[:, None]
    Xhat = koopman.predict_batch(model, batch.X, U)
    return tape_u, U, Xhat


def loss_L2(actor, critic, model, batch, cost):
    _check(actor, critic, model, batch)
    _, U, Xhat = _policy_terms(actor, model, batch)
    stage = cost.cost(batch.X, U)
    return float(np.mean(stage + critic.gamma * critic_mod.values(critic, Xhat)))


def loss_and_grad_L2(actor, critic, model, batch, cost):
    _check(actor, critic, model, batch)
    tape_u, U, Xhat = _policy_terms(actor, model, batch)
    stage = cost.cost(batch.X, U)
    spec_J, theta_J = critic.spec, critic.theta_J
    tape_J = neural.forward_tape(spec_J, theta_J, Xhat)
    v = neural.output_of(spec_J, tape_J)[0]
    dJ_dx = neural.vjp_tape(spec_J, theta_J, tape_J, np.ones((1, batch.N)))[1]
    CB = koopman.input_sensitivity(model)
    du = cost.cost_grad_u(batch.X, U) + critic.gamma * (CB.T @ dJ_dx)
    grad = neural.vjp_tape(actor.spec, actor.theta_mu, tape_u, du / batch.N)[0]
    return float(np.mean(stage + critic.gamma * v)), grad


def grad_L2(actor, critic, model, batch, cost):
    return loss_and_grad_L2(actor, critic, model, batch, cost)[1]


def output_bias_slice(actor):
    """Slice of ``theta_mu`` holding the output-layer bias."""
    return list(actor.spec.layer_slices())[-1][1]


def update_policy(actor, grad, step):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != actor.theta_mu.shape:
        raise InvalidInput(f"gradient must have length {actor.theta_mu.shape[0]}")
    if not np.all(np.isfinite(grad)):
        raise NumericalDivergence("policy gradient (L2)")
    return replace(actor, theta_mu=actor.theta_mu - step * grad)
