"""Verification helpers: finite-difference oracles, rank audits, linear data.

``gradient_suite`` is what ``pgdk gradcheck`` runs: randomized instances of
the three analytic gradients (lifting, critic, policy) against central
differences of the corresponding losses.
"""

from dataclasses import dataclass

import numpy as np

from . import actor as actor_mod
from . import critic as critic_mod
from . import koopman, neural
from .envs import QuadraticCost
from .errors import InvalidInput, OracleError
from .numerics import DEFAULT_TOL, singular_values

FD_STEP = 1e-6
GRAD_TOL = 1e-4


@dataclass
class FdCheckResult:
    loss_name: str
    max_rel_error: float
    worst_coordinate: int
    n_trials: int

    @property
    def passed(self):
        return self.max_rel_error < GRAD_TOL


def finite_diff_grad(loss, theta, h=FD_STEP):
    """Central differences ``(loss(t + h e_j) - loss(t - h e_j)) / 2h``."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for j in range(theta.shape[0]):
        orig = theta[j]
        theta[j] = orig + h
        fp = loss(theta)
        theta[j] = orig - h
        fm = loss(theta)
        theta[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"loss is not finite around coordinate {j}")
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||, 1e-12)`` and the coordinate of largest |a - n|."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = a - b
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(diff) / denom), int(np.argmax(np.abs(diff))) if diff.size else 0


# -- randomized gradient instances --------------------------------------------

def _random_instance(rng):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    r = int(rng.integers(1, 9))
    N = int(rng.integers(r + m, 33))
    batch = koopman.DataBatch(
        rng.normal(size=(n, N)), rng.normal(size=(n, N)),
        rng.normal(size=(m, N)), rng.uniform(0.0, 2.0, size=N),
    )
    seed = int(rng.integers(2 ** 31))
    hidden = (int(rng.integers(2, 9)),)
    model = koopman.make_model(n, m, r, hidden, seed)
    model = koopman.refit(model, batch, strict=False)
    gamma = float(rng.uniform(0.5, 1.0))
    critic = critic_mod.make_critic(n, (int(rng.integers(2, 9)),), gamma, seed + 1)
    critic.theta_J = critic.theta_J + 0.1 * rng.normal(size=critic.theta_J.shape)
    bound = float(rng.uniform(0.5, 3.0))
    actor = actor_mod.make_actor(n, -bound * np.ones(m), bound * np.ones(m),
                                 (int(rng.integers(2, 9)),), seed + 2)
    cost = QuadraticCost(rng.uniform(0.1, 1.0, size=n), rng.uniform(0.1, 1.0, size=m))
    return batch, model, critic, actor, cost


def _check_l1(batch, model, critic, actor, cost, corrupt):
    K = koopman.model_K(model)
    analytic = koopman.grad_L1(model, K, batch)
    numeric = finite_diff_grad(lambda th: koopman.loss_L1(model, K, batch, theta_f=th), model.theta_f)
    return analytic, numeric


def _check_td(batch, model, critic, actor, cost, corrupt):
    analytic = critic_mod.grad_td(critic, batch)

    def loss(th):
        return critic_mod.td_loss(critic_mod.Critic(critic.spec, th, critic.gamma), batch)

    return analytic, finite_diff_grad(loss, critic.theta_J)


def _check_l2(batch, model, critic, actor, cost, corrupt):
    analytic = actor_mod.grad_L2(actor, critic, model, batch, cost)

    def loss(th):
        a = actor_mod.Actor(actor.spec, th, actor.action_low, actor.action_high)
        return actor_mod.loss_L2(a, critic, model, batch, cost)

    return analytic, finite_diff_grad(loss, actor.theta_mu)


GRADIENT_CHECKS = (("L1", _check_l1), ("L3", _check_td), ("L2", _check_l2))


def gradient_suite(trials=20, seed=0, corrupt=False):
    """Check every analytic gradient on ``trials`` random instances.

    ``corrupt`` perturbs the analytic gradients by 1% as a negative control.
    """
    rng = np.random.default_rng(seed)
    instances = [_random_instance(rng) for _ in range(trials)]
    results = []
    for name, check in GRADIENT_CHECKS:
        worst, worst_j = 0.0, 0
        for inst in instances:
            analytic, numeric = check(*inst, corrupt)
            if corrupt:
                analytic = analytic * 1.01 + 1e-3
            err, j = relative_error(analytic, numeric)
            if err >= worst:
                worst, worst_j = err, j
        results.append(FdCheckResult(name, worst, worst_j, trials))
    return results


# -- rank audit -----------------------------------------------------------------

@dataclass
class RankAudit:
    N: int
    r: int
    m: int
    batch_too_small: bool
    rank_G: int = None
    rank_GU: int = None
    margin_G: float = None
    margin_GU: float = None

    @property
    def full_rank_G(self):
        return self.rank_G == self.r

    @property
    def full_rank_GU(self):
        return self.rank_GU == self.r + self.m

    @property
    def ok(self):
        return not self.batch_too_small and self.full_rank_G and self.full_rank_GU

    def as_pairs(self):
        return [("N", self.N), ("r", self.r), ("m", self.m),
                ("batch_too_small", int(self.batch_too_small)),
                ("rank_G", self.rank_G), ("rank_GU", self.rank_GU),
                ("margin_G", self.margin_G), ("margin_GU", self.margin_GU),
                ("ok", int(self.ok))]


def _rank_and_margin(M, tol):
    s = singular_values(M)
    if s.size == 0 or s[0] == 0:
        return 0, 0.0
    keep = s > tol * s[0]
    return int(keep.sum()), float(s[keep][-1] / s[0])


def audit_rank(batch, model, tol=DEFAULT_TOL):
    """Row ranks of ``G`` and ``[G; U]`` under the model's lifting.

    ``margin`` is the smallest retained singular value over the largest. The
    audit only reports; it never raises on a deficient batch.
    """
    r, m, N = model.r, batch.m, batch.N
    if N < r + m:
        return RankAudit(N, r, m, True)
    G = koopman.lift_batch(model, batch.X)
    rG, mG = _rank_and_margin(G, tol)
    rGU, mGU = _rank_and_margin(np.vstack([G, batch.U]), tol)
    return RankAudit(N, r, m, False, rG, rGU, mG, mGU)


# -- linear-system data -----------------------------------------------------------

def gen_linear_data(A0, B0, steps, input_scale, seed, x0=None):
    """Simulate ``x' = A0 x + B0 u`` with Gaussian inputs; columns are consecutive.

    The cost field holds ``|x|^2 + |u|^2``.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=np.float64))
    B0 = np.atleast_2d(np.asarray(B0, dtype=np.float64))
    n, m = B0.shape
    if A0.shape != (n, n):
        raise InvalidInput("A0 must be square with as many rows as B0")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) if x0 is None else np.asarray(x0, dtype=np.float64)
    X = np.empty((n, steps + 1))
    U = input_scale * rng.normal(size=(m, steps))
    X[:, 0] = x
    for k in range(steps):
        X[:, k + 1] = A0 @ X[:, k] + B0 @ U[:, k]
        if not np.all(np.isfinite(X[:, k + 1])) or np.abs(X[:, k + 1]).max() > 1e12:
            raise InvalidInput(f"linear system diverged at step {k + 1}")
    costs = np.sum(X[:, :-1] ** 2, axis=0) + np.sum(U ** 2, axis=0)
    return koopman.DataBatch(X[:, :-1], X[:, 1:], U, costs)


def identity_lifting_model(n, m):
    """Koopman model whose lifting is exactly ``g(x) = x`` (one identity layer)."""
    spec = neural.MlpSpec((n, n))
    theta = np.concatenate([np.eye(n).ravel(), np.zeros(n)])
    return koopman.KoopmanModel(spec, theta, np.zeros((n, n)), np.zeros((n, m)), np.zeros((n, n)))
