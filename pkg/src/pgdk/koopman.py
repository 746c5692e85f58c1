"""Deep Koopman representation {g, A, B, C} of unknown dynamics.

The lifting network ``g`` maps a state to ``r`` observables that evolve
linearly, ``g(x') ~ A g(x) + B u``, and ``C`` maps observables back to the
state. Given ``g``, the matrices are closed-form least-squares fits::

    [A, B] = Gbar [G; U]^+        C = X G^+

The lifting parameters are then trained by gradient descent on the stacked
residual with ``K = [[A, B], [C, 0]]`` held fixed.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from . import neural
from .checkpoint import load_matrix, save_matrix
from .errors import BatchTooSmall, DivergedRollout, InvalidInput, ParseError, RankDeficient
from .numerics import DEFAULT_TOL, pinv, singular_values

RIDGE_LAMBDA = 1e-8
RIDGE_BAND = 10.0


@dataclass
class DataBatch:
    """Column-stacked transitions: ``X[:, k] -> Xbar[:, k]`` under ``U[:, k]``."""

    X: np.ndarray
    Xbar: np.ndarray
    U: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.Xbar = np.ascontiguousarray(self.Xbar, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.costs = np.ascontiguousarray(self.costs, dtype=np.float64).reshape(-1)
        N = self.X.shape[1] if self.X.ndim == 2 else -1
        if (
            self.X.ndim != 2 or self.Xbar.shape != self.X.shape
            or self.U.ndim != 2 or self.U.shape[1] != N
            or self.costs.shape[0] != N
        ):
            raise InvalidInput(
                f"inconsistent batch shapes X{self.X.shape} Xbar{self.Xbar.shape} "
                f"U{self.U.shape} costs{self.costs.shape}"
            )
        for name in ("X", "Xbar", "U", "costs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInput(f"batch field {name} has non-finite entries")

    @property
    def N(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.U.shape[0]

    def columns(self, idx):
        return DataBatch(self.X[:, idx], self.Xbar[:, idx], self.U[:, idx], self.costs[idx])


@dataclass
class KoopmanModel:
    g_spec: neural.MlpSpec
    theta_f: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    augment_state: bool = False

    @property
    def n(self):
        return self.g_spec.n_in

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.g_spec.n_out + (self.n if self.augment_state else 0)

    @property
    def r_g(self):
        return self.g_spec.n_out


def default_lifting_dim(n):
    return max(2 * n, 8)


def make_model(n, m, r=None, hidden=(32,), seed=0, augment_state=False):
    """Fresh model with a tanh lifting net; ``A, B, C`` start at zero."""
    r_g = default_lifting_dim(n) if r is None else int(r)
    spec = neural.MlpSpec((n, *hidden, r_g))
    r_tot = r_g + (n if augment_state else 0)
    return KoopmanModel(
        spec, neural.init_params(spec, seed),
        np.zeros((r_tot, r_tot)), np.zeros((r_tot, m)), np.zeros((n, r_tot)),
        augment_state,
    )


def _lift_tape(model, states, theta_f=None):
    theta = model.theta_f if theta_f is None else theta_f
    tape = neural.forward_tape(model.g_spec, theta, states)
    G = neural.output_of(model.g_spec, tape)
    if model.augment_state:
        G = np.vstack([G, states])
    return np.ascontiguousarray(G), tape


def lift_batch(model, states, theta_f=None):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] != model.n:
        raise InvalidInput(f"states must be {model.n} x N, got shape {states.shape}")
    return _lift_tape(model, states, theta_f)[0]


def _lstsq_rows(target, Z, tol, which, strict):
    """Solve ``min_M ||target - M Z||_F`` for full-row-rank ``Z``.

    Plain pseudoinverse while the conditioning margin clears ``RIDGE_BAND * tol``;
    Tikhonov-damped normal equations inside the band. Below ``tol`` the fit
    raises unless ``strict`` is off.
    """
    s = singular_values(Z)
    rows = Z.shape[0]
    margin = s[-1] / s[0] if s.size and s[0] > 0 else 0.0
    if s.size < rows or margin <= tol:
        if strict:
            rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
            raise RankDeficient(which, rank, rows)
        return _ridge(target, Z)
    if margin <= RIDGE_BAND * tol:
        return _ridge(target, Z)
    return target @ pinv(Z, tol)


def _ridge(target, Z):
    gram = Z @ Z.T + RIDGE_LAMBDA * np.eye(Z.shape[0])
    return np.linalg.solve(gram, Z @ target.T).T


def fit_linear_maps(G, Gbar, U, X, tol=DEFAULT_TOL, strict=True):
    """Least-squares ``A, B`` (lifted one-step map) and ``C`` (read-out).

    Raises ``BatchTooSmall`` when ``N < r + m`` and ``RankDeficient`` when a
    stacked matrix is numerically rank deficient (unless ``strict=False``,
    which switches those cases to the damped solve).
    """
    G = np.asarray(G, dtype=np.float64)
    Gbar = np.asarray(Gbar, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    r, N = G.shape
    m = U.shape[0]
    if Gbar.shape != (r, N) or U.shape[1] != N or X.shape[1] != N:
        raise InvalidInput("G, Gbar, U, X must share the batch dimension")
    if N < r + m:
        raise BatchTooSmall(f"batch of {N} columns cannot fit r+m = {r + m} unknowns per row")
    Z = np.vstack([G, U])
    AB = _lstsq_rows(Gbar, Z, tol, "[G;U]", strict)
    C = _lstsq_rows(X, G, tol, "G", strict)
    return AB[:, :r].copy(), AB[:, r:].copy(), C


def assemble_K(A, B, C):
    r, m = B.shape
    n = C.shape[0]
    K = np.zeros((r + n, r + m))
    K[:r, :r] = A
    K[:r, r:] = B
    K[r:, :r] = C
    return K


def model_K(model):
    return assemble_K(model.A, model.B, model.C)


def refit(model, batch, tol=DEFAULT_TOL, strict=True):
    """Return a copy of ``model`` with ``A, B, C`` fitted on ``batch`` under the current lifting."""
    G = lift_batch(model, batch.X)
    Gbar = lift_batch(model, batch.Xbar)
    A, B, C = fit_linear_maps(G, Gbar, batch.U, batch.X, tol, strict)
    return replace(model, A=A, B=B, C=C)


def predict_batch(model, X, U, theta_f=None):
    G = lift_batch(model, X, theta_f)
    return model.C @ (model.A @ G + model.B @ U)


def predict(model, xhat, u):
    """One-step predictor ``C (A g(xhat) + B u)``."""
    xhat = np.asarray(xhat, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if xhat.shape != (model.n,) or u.shape != (model.m,):
        raise InvalidInput(f"expected x of length {model.n} and u of length {model.m}")
    return predict_batch(model, xhat[:, None], u[:, None])[:, 0]


def input_sensitivity(model):
    """``d xhat_{k+1} / d u_k = C B``."""
    return model.C @ model.B


def _check_K(model, K, batch):
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (model.r + model.n, model.r + model.m):
        raise InvalidInput(
            f"K must be {(model.r + model.n, model.r + model.m)}, got {K.shape}"
        )
    if batch.n != model.n or batch.m != model.m:
        raise InvalidInput("batch dimensions do not match the model")
    return K


def l1_residual(model, K, batch, theta_f=None):
    """Stacked residual ``[Gbar; X] - K [G; U]`` plus the lifting tapes."""
    G, tape_x = _lift_tape(model, batch.X, theta_f)
    Gbar, tape_xbar = _lift_tape(model, batch.Xbar, theta_f)
    delta = np.vstack([Gbar, batch.X]) - K @ np.vstack([G, batch.U])
    return delta, tape_x, tape_xbar


def loss_L1(model, K, batch, theta_f=None):
    K = _check_K(model, K, batch)
    delta = l1_residual(model, K, batch, theta_f)[0]
    return float(np.sum(delta * delta) / batch.N)


def _l1_grad_terms(model, K, tape_x, tape_xbar, delta, N, theta_f=None):
    """Split gradient: successor-lift term and current-lift term."""
    theta = model.theta_f if theta_f is None else theta_f
    rg = model.r_g
    scale = 2.0 / N
    cot_next = scale * delta[:rg]
    cot_curr = -scale * (K[:, :model.r].T @ delta)[:rg]
    g_next = neural.vjp_tape(model.g_spec, theta, tape_xbar, cot_next)[0]
    g_curr = neural.vjp_tape(model.g_spec, theta, tape_x, cot_curr)[0]
    return g_next, g_curr


def loss_and_grad_L1(model, K, batch, theta_f=None):
    K = _check_K(model, K, batch)
    delta, tape_x, tape_xbar = l1_residual(model, K, batch, theta_f)
    g_next, g_curr = _l1_grad_terms(model, K, tape_x, tape_xbar, delta, batch.N, theta_f)
    return float(np.sum(delta * delta) / batch.N), g_next + g_curr


def grad_L1(model, K, batch, theta_f=None):
    return loss_and_grad_L1(model, K, batch, theta_f)[1]


def rollout(model, x0, inputs):
    """Iterate the predictor from ``x0``; returns one predicted state per input."""
    x = np.asarray(x0, dtype=np.float64)
    out = []
    for step, u in enumerate(inputs):
        x = predict(model, x, np.asarray(u, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(x)):
            raise DivergedRollout(step)
        out.append(x)
    return out


def save_model(directory, model, prefix="koopman"):
    os.makedirs(directory, exist_ok=True)
    neural.save_params(os.path.join(directory, f"{prefix}_g.ckpt"), model.g_spec, model.theta_f)
    for name in ("A", "B", "C"):
        save_matrix(os.path.join(directory, f"{prefix}_{name}.mat"), name, getattr(model, name))
    with open(os.path.join(directory, f"{prefix}.meta"), "w") as fh:
        fh.write(f"augment_state={int(model.augment_state)}\n")


def load_model(directory, prefix="koopman"):
    spec, theta = neural.load_params(os.path.join(directory, f"{prefix}_g.ckpt"))
    mats = {}
    for name in ("A", "B", "C"):
        tag, M = load_matrix(os.path.join(directory, f"{prefix}_{name}.mat"))
        if tag != name:
            raise ParseError(f"expected matrix {name}, found {tag}")
        mats[name] = M
    with open(os.path.join(directory, f"{prefix}.meta")) as fh:
        meta = dict(line.strip().split("=", 1) for line in fh if "=" in line)
    return KoopmanModel(spec, theta, mats["A"], mats["B"], mats["C"], meta.get("augment_state") == "1")
