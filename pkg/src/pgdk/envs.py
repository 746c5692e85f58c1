"""Built-in continuous-control environments and a discounted LQR oracle.

Environments are stateless transition functions plus a seeded reset. Every
environment carries a nonnegative quadratic stage cost with an analytic
input gradient, which the policy gradient needs.

State conventions (angles measured from upright, radians)::

    double_integrator  x = (p, v)                      u = (accel,)
    pendulum           x = (theta, theta_dot)          u = (torque,)
    cartpole           x = (pos, pos_dot, theta, theta_dot)   u = (force,)

All integrators are semi-implicit Euler (velocity first) except the double
integrator, which uses its exact discrete form ``p' = p + dt v, v' = v + dt u``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnvDiverged, InvalidInput, OracleDiverged


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n: int
    m: int
    action_low: np.ndarray
    action_high: np.ndarray
    dt: float
    horizon: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInput("dt must be positive")
        if self.horizon < 1:
            raise InvalidInput("horizon must be at least 1")


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _sin_reduced(theta):
    # sin via the nearest multiple of pi, so sin(pi) evaluates to exactly 0
    w = float(wrap_angle(theta))
    if w > 0.5 * math.pi:
        return math.sin(math.pi - w)
    if w < -0.5 * math.pi:
        return -math.sin(math.pi + w)
    return math.sin(w)


class QuadraticCost:
    """``c(x, u) = sum_i q_i s_i(x)^2 + sum_j r_j u_j^2``.

    ``s_i`` is the raw state component, except that components listed in
    ``angle_idx`` are wrapped into (-pi, pi] first. Accepts single vectors or
    column batches (``(n, N)`` and ``(m, N)``).
    """

    def __init__(self, q, r, angle_idx=()):
        self.q = np.asarray(q, dtype=np.float64)
        self.r = np.asarray(r, dtype=np.float64)
        if np.any(self.q < 0) or np.any(self.r < 0):
            raise InvalidInput("cost weights must be nonnegative")
        self.angle_idx = tuple(angle_idx)

    def _state(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.angle_idx:
            x = x.copy()
            for i in self.angle_idx:
                x[i] = wrap_angle(x[i])
        return x

    def cost(self, x, u):
        s = self._state(x)
        u = np.asarray(u, dtype=np.float64)
        qs = self.q.reshape((-1,) + (1,) * (s.ndim - 1))
        ru = self.r.reshape((-1,) + (1,) * (u.ndim - 1))
        return np.sum(qs * s * s, axis=0) + np.sum(ru * u * u, axis=0)

    def cost_grad_u(self, x, u):
        u = np.asarray(u, dtype=np.float64)
        ru = self.r.reshape((-1,) + (1,) * (u.ndim - 1))
        return 2.0 * ru * u


class Env:
    """Base class: subclasses define ``PARAMS``, ``_build`` and ``_integrate``."""

    name = ""
    PARAMS = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.PARAMS)
        if unknown:
            raise ConfigError(f"unknown {self.name} parameter(s): {sorted(unknown)}")
        self.params = {**self.PARAMS, **params}
        self._build()

    def clip(self, u):
        return np.clip(np.asarray(u, dtype=np.float64).reshape(-1),
                       self.spec.action_low, self.spec.action_high)

    def step(self, x, u):
        """Clip ``u``, integrate one step; returns ``(x_next, cost)``."""
        x = np.asarray(x, dtype=np.float64)
        u = self.clip(u)
        x_next = self._integrate(x, u)
        with np.errstate(over="ignore"):
            c = float(self.cost.cost(x, u))
        if not (np.all(np.isfinite(x_next)) and math.isfinite(c)):
            raise EnvDiverged(f"{self.name}: non-finite state or cost after step")
        return x_next, c

    def reset(self, seed):
        return self._reset(np.random.default_rng(seed))


class DoubleIntegrator(Env):
    name = "double_integrator"
    PARAMS = {"dt": 0.1, "horizon": 100, "u_max": 20.0,
              "q_p": 1.0, "q_v": 0.1, "r_u": 0.01, "x0_range": 1.0}

    def _build(self):
        p = self.params
        self.spec = EnvSpec(self.name, 2, 1, np.array([-p["u_max"]]), np.array([p["u_max"]]),
                            float(p["dt"]), int(p["horizon"]))
        self.cost = QuadraticCost([p["q_p"], p["q_v"]], [p["r_u"]])

    def linear_model(self):
        """``(A, B, Q, R)`` of the exact discrete system and its cost."""
        dt = self.spec.dt
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[0.0], [dt]])
        Q = np.diag(self.cost.q)
        R = np.diag(self.cost.r)
        return A, B, Q, R

    def _integrate(self, x, u):
        dt = self.spec.dt
        return np.array([x[0] + dt * x[1], x[1] + dt * u[0]])

    def _reset(self, rng):
        a = self.params["x0_range"]
        return rng.uniform(-a, a, size=2)


class Pendulum(Env):
    """Torque-driven pendulum, ``theta_ddot = (3g/2l) sin(theta) + 3 u / (m l^2)``."""

    name = "pendulum"
    PARAMS = {"g": 10.0, "mass": 1.0, "length": 1.0, "dt": 0.05, "horizon": 200,
              "u_max": 5.0, "mode": "stabilize"}

    def _build(self):
        p = self.params
        if p["mode"] not in ("stabilize", "swingup"):
            raise ConfigError(f"pendulum mode must be 'stabilize' or 'swingup', got {p['mode']!r}")
        self.spec = EnvSpec(self.name, 2, 1, np.array([-p["u_max"]]), np.array([p["u_max"]]),
                            float(p["dt"]), int(p["horizon"]))
        self.cost = QuadraticCost([1.0, 0.1], [0.001], angle_idx=(0,))

    def _integrate(self, x, u):
        p = self.params
        dt = self.spec.dt
        acc = (1.5 * p["g"] / p["length"]) * _sin_reduced(x[0]) \
            + 3.0 / (p["mass"] * p["length"] ** 2) * u[0]
        thdot = x[1] + dt * acc
        return np.array([x[0] + dt * thdot, thdot])

    def _reset(self, rng):
        if self.params["mode"] == "stabilize":
            return np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2)])
        return np.array([math.pi + rng.uniform(-0.1, 0.1), rng.uniform(-0.2, 0.2)])


class CartPole(Env):
    """Continuous-force cart-pole (pole half-length ``length``)."""

    name = "cartpole"
    PARAMS = {"g": 9.8, "mass_cart": 1.0, "mass_pole": 0.1, "length": 0.5,
              "dt": 0.02, "horizon": 200, "u_max": 10.0}

    def _build(self):
        p = self.params
        self.spec = EnvSpec(self.name, 4, 1, np.array([-p["u_max"]]), np.array([p["u_max"]]),
                            float(p["dt"]), int(p["horizon"]))
        # state order (pos, pos_dot, theta, theta_dot)
        self.cost = QuadraticCost([1.0, 0.1, 10.0, 0.1], [0.001], angle_idx=(2,))

    def _integrate(self, x, u):
        p = self.params
        dt = self.spec.dt
        pos, vel, th, om = x
        total = p["mass_cart"] + p["mass_pole"]
        pml = p["mass_pole"] * p["length"]
        s, c = math.sin(th), math.cos(th)
        temp = (u[0] + pml * om * om * s) / total
        th_acc = (p["g"] * s - c * temp) / (
            p["length"] * (4.0 / 3.0 - p["mass_pole"] * c * c / total))
        x_acc = temp - pml * th_acc * c / total
        vel = vel + dt * x_acc
        om = om + dt * th_acc
        return np.array([pos + dt * vel, vel, th + dt * om, om])

    def _reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)


ENVIRONMENTS = {cls.name: cls for cls in (DoubleIntegrator, Pendulum, CartPole)}


def make_env(name, **params):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**params)


def lqr_oracle(A, B, Q, R, gamma, iters=10_000, tol=1e-12):
    """Discounted Riccati fixed point.

    Iterates ``P <- Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA`` from ``P = Q``
    until ``||dP||_F < tol``; the optimal control is ``u = -K x`` with
    ``K = g (R + g B'PB)^-1 B'PA``. Returns ``(K, P)``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=np.float64)) for M in (A, B, Q, R))
    P = Q.copy()
    for _ in range(iters):
        S = R + gamma * B.T @ P @ B
        PA = B.T @ P @ A
        P_new = Q + gamma * A.T @ P @ A - gamma ** 2 * PA.T @ np.linalg.solve(S, PA)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise OracleDiverged("Riccati iteration produced non-finite values")
        done = np.linalg.norm(P_new - P) < tol
        P = P_new
        if done:
            K = gamma * np.linalg.solve(R + gamma * B.T @ P @ B, B.T @ P @ A)
            return K, P
    raise OracleDiverged(f"Riccati iteration did not converge in {iters} iterations")
