"""End-to-end training loop, evaluation and convergence bookkeeping.

Per environment step the loop acts with Gaussian exploration noise, stores
the transition and, once the buffer holds ``batch`` tuples, performs one
update iteration:

1. sample a batch and refit ``A, B, C`` under the current lifting;
2. one gradient step on the lifting (L1) and one on the critic (L3);
3. one policy-gradient step (L2), evaluated with the *updated* lifting and
   critic and the ``K`` fitted in step 1.

Randomness comes from ``SeedSequence(seed).spawn(6)``, one child per
consumer, in this order: lifting init, critic init, actor init, replay
sampling, exploration noise, episode resets.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import actor as actor_mod
from . import critic as critic_mod
from . import koopman, neural
from .errors import BatchTooSmall, InsufficientHistory, InvalidInput, NumericalDivergence, ParseError
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)

LOG_COLUMNS = (
    "episode", "step", "iter", "cost", "neg_cost", "L1", "L3", "L2",
    "gnorm_f", "gnorm_J", "gnorm_mu", "min_gnorm_f_sq", "min_gnorm_mu_sq",
    "samples_consumed",
)
_INT_COLUMNS = {"episode", "step", "iter", "samples_consumed"}

STREAMS = ("g_init", "critic_init", "actor_init", "replay", "noise", "resets")


def _child_seed(ss):
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def seed_streams(seed):
    return dict(zip(STREAMS, np.random.SeedSequence(seed).spawn(len(STREAMS))))


class TrainLog:
    """One row per environment step, columns as in ``LOG_COLUMNS``.

    Warm-up rows (before the first update) carry ``nan`` in every loss and
    gradient column and ``iter == 0``.
    """

    def __init__(self, batch_size, rows=None):
        self.batch_size = batch_size
        self.rows = rows if rows is not None else []

    def append(self, **row):
        self.rows.append(tuple(row[c] for c in LOG_COLUMNS))

    def column(self, name):
        k = LOG_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=np.float64)

    def update_rows(self):
        """Rows that closed an update iteration, in order."""
        k_iter = LOG_COLUMNS.index("iter")
        out, last = [], 0
        for r in self.rows:
            if r[k_iter] > last:
                out.append(r)
                last = r[k_iter]
        return out

    @property
    def n_updates(self):
        return int(self.rows[-1][LOG_COLUMNS.index("iter")]) if self.rows else 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([str(int(v)) if c in _INT_COLUMNS else repr(float(v))
                            for c, v in zip(LOG_COLUMNS, r)])

    @classmethod
    def read_csv(cls, path, batch_size=None):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != LOG_COLUMNS:
                raise ParseError(f"{path}: line 1: header does not match the train-log columns")
            rows = []
            for no, rec in enumerate(reader, start=2):
                if len(rec) != len(LOG_COLUMNS):
                    raise ParseError(f"{path}: line {no}: expected {len(LOG_COLUMNS)} fields")
                try:
                    rows.append(tuple(int(v) if c in _INT_COLUMNS else float(v)
                                      for c, v in zip(LOG_COLUMNS, rec)))
                except ValueError as exc:
                    raise ParseError(f"{path}: line {no}: {exc}") from None
        if batch_size is None:
            # recover N from samples_consumed = 3 * iter * N
            k_i, k_s = LOG_COLUMNS.index("iter"), LOG_COLUMNS.index("samples_consumed")
            upd = [r for r in rows if r[k_i] > 0]
            batch_size = upd[0][k_s] // (3 * upd[0][k_i]) if upd else 0
        return cls(batch_size, rows)


@dataclass
class TrainResult:
    model: koopman.KoopmanModel
    critic: critic_mod.Critic
    actor: actor_mod.Actor
    log: TrainLog
    config: object = None
    buffer: ReplayBuffer = None


def explore(actor, x, sigma, rng):
    """``mu(x)`` plus N(0, sigma^2) noise per component, clipped to the action box."""
    if sigma < 0:
        raise InvalidInput("sigma must be nonnegative")
    u = actor_mod.act(actor, x)
    noise = rng.standard_normal(u.shape[0])
    return np.clip(u + sigma * noise, actor.action_low, actor.action_high)


def _clipped(grad, limit):
    norm = float(np.sqrt(grad @ grad))
    if norm > limit:
        return grad * (limit / norm), norm
    return grad, norm


def build_agents(cfg, env):
    """Freshly initialised ``(model, critic, actor)`` for a resolved config."""
    n, m = env.spec.n, env.spec.m
    ss = seed_streams(cfg.seed)
    model = koopman.make_model(n, m, cfg.r, cfg.g_hidden, _child_seed(ss["g_init"]), cfg.augment_state)
    critic = critic_mod.make_critic(n, cfg.critic_hidden, cfg.gamma, _child_seed(ss["critic_init"]),
                                    cfg.critic_zero_init)
    actor = actor_mod.make_actor(n, env.spec.action_low, env.spec.action_high, cfg.actor_hidden,
                                 _child_seed(ss["actor_init"]), cfg.actor_zero_init)
    return model, critic, actor, ss


def train(config, actor=None, callback=None):
    """Run the full loop for ``config``; returns a ``TrainResult``.

    ``actor`` replaces the freshly initialised policy when given.
    ``callback(episode, result_so_far)`` runs after each episode.
    """
    cfg = config.resolved()
    cfg.validate()
    env = cfg.make_env()
    model, critic, init_actor, ss = build_agents(cfg, env)
    actor = init_actor if actor is None else actor
    bias_sl = actor_mod.output_bias_slice(actor)
    cost = env.cost
    buf = ReplayBuffer(cfg.capacity, ss["replay"])
    noise_rng = np.random.default_rng(ss["noise"])
    reset_rng = np.random.default_rng(ss["resets"])
    N = cfg.batch
    tlog = TrainLog(N)
    nan = math.nan

    i = 0
    min_f = min_mu = math.inf
    for ep in range(cfg.episodes):
        sigma = cfg.noise_sigma0 * cfg.noise_decay ** ep
        x = env.reset(int(reset_rng.integers(2 ** 63)))
        for t in range(cfg.horizon):
            u = explore(actor, x, sigma, noise_rng)
            x_next, c = env.step(x, u)
            buf.push(Transition(x, env.clip(u), c, x_next))
            L1 = L3 = L2 = gn_f = gn_J = gn_mu = nan
            if len(buf) >= N:
                batch = buf.sample_batch(N)
                a_f, a_J, a_mu = cfg.alphas(i)
                model = koopman.refit(model, batch, cfg.rank_tol, strict=False)
                K = koopman.model_K(model)
                L1, g_f = koopman.loss_and_grad_L1(model, K, batch)
                L3, g_J = critic_mod.loss_and_grad_td(critic, batch)
                if not np.all(np.isfinite(g_f)) or not math.isfinite(L1):
                    raise NumericalDivergence("lifting parameters (L1)")
                if not np.all(np.isfinite(g_J)) or not math.isfinite(L3):
                    raise NumericalDivergence("critic parameters (L3)")
                step_f, gn_f = _clipped(g_f, cfg.grad_clip)
                step_J, gn_J = _clipped(g_J, cfg.grad_clip)
                model.theta_f = model.theta_f - a_f * step_f
                critic = critic_mod.update_critic(critic, step_J, a_J)

                L2, g_mu = actor_mod.loss_and_grad_L2(actor, critic, model, batch, cost)
                if not np.all(np.isfinite(g_mu)) or not math.isfinite(L2):
                    raise NumericalDivergence("policy parameters (L2)")
                if not cfg.actor_output_bias:
                    g_mu[bias_sl] = 0.0
                step_mu, gn_mu = _clipped(g_mu, cfg.grad_clip)
                actor = actor_mod.update_policy(actor, step_mu, a_mu)
                i += 1
                min_f = min(min_f, gn_f * gn_f)
                min_mu = min(min_mu, gn_mu * gn_mu)
            tlog.append(
                episode=ep + 1, step=t + 1, iter=i, cost=c, neg_cost=-c,
                L1=L1, L3=L3, L2=L2, gnorm_f=gn_f, gnorm_J=gn_J, gnorm_mu=gn_mu,
                min_gnorm_f_sq=min_f if i else nan, min_gnorm_mu_sq=min_mu if i else nan,
                samples_consumed=3 * i * N,
            )
            x = x_next
        if log.isEnabledFor(logging.INFO) and ((ep + 1) % 10 == 0 or ep + 1 == cfg.episodes):
            costs = tlog.column("cost")[-cfg.horizon:]
            log.info("episode %d/%d  iter %d  mean step cost %.4g  sigma %.3g",
                     ep + 1, cfg.episodes, i, costs.mean(), sigma)
        if callback is not None:
            callback(ep + 1, TrainResult(model, critic, actor, tlog, cfg, buf))
    return TrainResult(model, critic, actor, tlog, cfg, buf)


# -- evaluation ------------------------------------------------------------------

@dataclass
class EvalResult:
    mean_step_cost: float
    mean_discounted_cost: float
    episode_step_costs: np.ndarray      # average step cost of each episode
    episode_discounted_costs: np.ndarray
    running_average: np.ndarray         # accumulative mean of episode_step_costs
    initial_states: np.ndarray = field(repr=False)


def _policy(actor):
    if isinstance(actor, actor_mod.Actor):
        return lambda x: actor_mod.act(actor, x)
    if callable(actor):
        return actor
    raise InvalidInput("actor must be an Actor or a callable x -> u")


def evaluate(actor, env, episodes, seed, gamma=0.99, horizon=None):
    """Noise-free rollouts from seeded resets."""
    policy = _policy(actor)
    horizon = env.spec.horizon if horizon is None else horizon
    rng = np.random.default_rng(seed)
    step_means, disc, x0s = [], [], []
    discounts = gamma ** np.arange(horizon)
    for _ in range(episodes):
        x = env.reset(int(rng.integers(2 ** 63)))
        x0s.append(x)
        costs = np.empty(horizon)
        for t in range(horizon):
            x, costs[t] = env.step(x, policy(x))
        step_means.append(costs.mean())
        disc.append(float(discounts @ costs))
    step_means = np.array(step_means)
    return EvalResult(
        float(step_means.mean()), float(np.mean(disc)), step_means, np.array(disc),
        np.cumsum(step_means) / np.arange(1, episodes + 1), np.array(x0s),
    )


def linear_actor(K, action_low=-np.inf, action_high=np.inf):
    """Wrap a state-feedback gain ``u = -K x`` as a one-layer identity-head actor."""
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    m, n = K.shape
    spec = neural.MlpSpec((n, m))
    theta = np.concatenate([-K.ravel(), np.zeros(m)])
    low = np.broadcast_to(np.asarray(action_low, dtype=np.float64), (m,))
    high = np.broadcast_to(np.asarray(action_high, dtype=np.float64), (m,))
    return actor_mod.Actor(spec, theta, low, high)


# -- system identification ---------------------------------------------------------

ROLLOUT_STEPS = 20


@dataclass
class SysidResult:
    model: koopman.KoopmanModel
    L1: float                    # on the full training split, after the final refit
    one_step_error: float        # mean ||x_hat' - x'|| over held-out rows
    one_step_max: float
    rollout_error: float         # mean per-step error of ROLLOUT_STEPS-step rollouts
    rollout_max: float
    n_train: int
    n_test: int
    n_windows: int

    def as_pairs(self):
        return [("n_train", self.n_train), ("n_test", self.n_test), ("L1", self.L1),
                ("one_step_error", self.one_step_error), ("one_step_max", self.one_step_max),
                ("rollout_windows", self.n_windows), ("rollout_error", self.rollout_error),
                ("rollout_max", self.rollout_max)]


def _batch_of(transitions):
    return koopman.DataBatch(
        np.column_stack([t.x for t in transitions]),
        np.column_stack([t.x_next for t in transitions]),
        np.column_stack([t.u for t in transitions]),
        np.array([t.cost for t in transitions]),
    )


def _windows(transitions, length):
    """Start indices of non-overlapping runs of ``length`` chained transitions."""
    starts, k = [], 0
    while k + length <= len(transitions):
        chained = all(np.array_equal(transitions[j].x_next, transitions[j + 1].x)
                      for j in range(k, k + length - 1))
        if chained:
            starts.append(k)
            k += length
        else:
            k += 1
    return starts


def identify(config, transitions, holdout=0.2):
    """Fit the lifting and ``A, B, C`` alone on recorded transitions.

    The last ``holdout`` fraction of rows is held out. ``config.sysid_iters``
    L1 steps run on batches drawn from the training rows, then the linear maps
    are refitted on the whole training split.
    """
    cfg = config
    N = cfg.batch
    if len(transitions) < N:
        raise BatchTooSmall(f"dump has {len(transitions)} rows, batch needs {N}")
    n, m = transitions[0].x.shape[0], transitions[0].u.shape[0]
    n_test = max(1, int(round(holdout * len(transitions))))
    train_rows, test_rows = transitions[:-n_test], transitions[-n_test:]
    if len(train_rows) < N:
        raise BatchTooSmall(f"training split has {len(train_rows)} rows, batch needs {N}")
    ss = seed_streams(cfg.seed)
    r = koopman.default_lifting_dim(n) if cfg.r is None else cfg.r
    model = koopman.make_model(n, m, r, cfg.g_hidden, _child_seed(ss["g_init"]), cfg.augment_state)
    rng = np.random.default_rng(ss["replay"])
    full = _batch_of(train_rows)
    for i in range(cfg.sysid_iters):
        idx = rng.choice(full.N, size=N, replace=False)
        batch = full.columns(idx)
        model = koopman.refit(model, batch, cfg.rank_tol, strict=False)
        L1, g = koopman.loss_and_grad_L1(model, koopman.model_K(model), batch)
        if not (math.isfinite(L1) and np.all(np.isfinite(g))):
            raise NumericalDivergence("lifting parameters (L1)")
        step, _ = _clipped(g, cfg.grad_clip)
        model.theta_f = model.theta_f - cfg.alphas(i)[0] * step
    model = koopman.refit(model, full, cfg.rank_tol, strict=False)
    L1 = koopman.loss_L1(model, koopman.model_K(model), full)

    test = _batch_of(test_rows)
    err1 = np.linalg.norm(koopman.predict_batch(model, test.X, test.U) - test.Xbar, axis=0)
    errs = []
    for k in _windows(test_rows, ROLLOUT_STEPS):
        window = test_rows[k:k + ROLLOUT_STEPS]
        pred = koopman.rollout(model, window[0].x, [t.u for t in window])
        errs.append([np.linalg.norm(p - t.x_next) for p, t in zip(pred, window)])
    errs = np.array(errs)
    roll_mean = float(errs.mean()) if errs.size else math.nan
    roll_max = float(errs.max()) if errs.size else math.nan
    return SysidResult(model, float(L1), float(err1.mean()), float(err1.max()),
                       roll_mean, roll_max, len(train_rows), len(test_rows), len(errs))


# -- convergence bookkeeping -------------------------------------------------------

MIN_REPORT_ITERS = 100


@dataclass
class ConvergenceReport:
    T: int
    N: int
    samples: int
    scaled_min_f: np.ndarray     # T * min_{i<=T} ||grad L1||^2, T = 1..T
    scaled_min_mu: np.ndarray
    envelope_ratio_f: float      # max / median over the second half
    envelope_ratio_mu: float
    envelope_ok_f: bool
    envelope_ok_mu: bool
    slope_f: float               # log-log slope of scaled_min over the second half
    slope_mu: float
    accounting_ok: bool

    def as_pairs(self):
        return [
            ("T", self.T), ("N", self.N), ("samples_3TN", self.samples),
            ("accounting_ok", int(self.accounting_ok)),
            ("final_T_min_gnorm_f_sq", float(self.scaled_min_f[-1])),
            ("final_T_min_gnorm_mu_sq", float(self.scaled_min_mu[-1])),
            ("envelope_ratio_f", self.envelope_ratio_f),
            ("envelope_ratio_mu", self.envelope_ratio_mu),
            ("envelope_ok_f", int(self.envelope_ok_f)),
            ("envelope_ok_mu", int(self.envelope_ok_mu)),
            ("loglog_slope_f", self.slope_f),
            ("loglog_slope_mu", self.slope_mu),
        ]

    def text(self):
        pairs = self.as_pairs()
        width = max(len(k) for k, _ in pairs)
        human = [f"{k.ljust(width)}  {v:.6g}" if isinstance(v, float) else f"{k.ljust(width)}  {v}"
                 for k, v in pairs]
        machine = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in pairs]
        return "\n".join(human) + "\n\n" + "\n".join(machine) + "\n"


def envelope(seq):
    """``(max / median, slope)`` of a positive sequence over its second half.

    ``slope`` is the least-squares slope of ``log seq`` against ``log T``.
    """
    seq = np.asarray(seq, dtype=np.float64)
    T = seq.shape[0]
    half = seq[T // 2:]
    Ts = np.arange(T // 2 + 1, T + 1, dtype=np.float64)
    med = float(np.median(half))
    ratio = float(half.max() / med) if med > 0 else math.inf
    pos = half > 0
    if pos.sum() >= 2:
        slope = float(np.polyfit(np.log(Ts[pos]), np.log(half[pos]), 1)[0])
    else:
        slope = math.nan
    return ratio, slope


def convergence_report(tlog, envelope_factor=2.0):
    """Scaled running-minimum gradient norms and the 3TN sample count.

    For ``L`` in {L1, L2} the sequence ``T * min_{i<=T} ||grad L(theta_i)||^2``
    is built over update iterations ``T = 1..T_end``; it passes the envelope
    check when its maximum over the second half is at most
    ``envelope_factor`` times its median over the second half.
    """
    rows = tlog.update_rows()
    T = len(rows)
    if T < MIN_REPORT_ITERS:
        raise InsufficientHistory(f"need at least {MIN_REPORT_ITERS} update iterations, log has {T}")
    col = {c: k for k, c in enumerate(LOG_COLUMNS)}
    Ts = np.arange(1, T + 1, dtype=np.float64)
    min_f = np.array([r[col["min_gnorm_f_sq"]] for r in rows])
    min_mu = np.array([r[col["min_gnorm_mu_sq"]] for r in rows])
    iters = np.array([r[col["iter"]] for r in rows])
    consumed = np.array([r[col["samples_consumed"]] for r in rows])
    N = tlog.batch_size
    accounting_ok = bool(np.all(iters == Ts) and np.all(consumed == 3 * Ts.astype(np.int64) * N))
    sf, smu = Ts * min_f, Ts * min_mu
    rf, slope_f = envelope(sf)
    rmu, slope_mu = envelope(smu)
    return ConvergenceReport(
        T, N, 3 * T * N, sf, smu, rf, rmu,
        rf <= envelope_factor, rmu <= envelope_factor, slope_f, slope_mu, accounting_ok,
    )


# -- checkpoints ---------------------------------------------------------------------

def save_agents(directory, result):
    os.makedirs(directory, exist_ok=True)
    koopman.save_model(directory, result.model)
    neural.save_params(os.path.join(directory, "critic.ckpt"), result.critic.spec, result.critic.theta_J)
    neural.save_params(os.path.join(directory, "actor.ckpt"), result.actor.spec, result.actor.theta_mu)
    with open(os.path.join(directory, "agents.meta"), "w") as fh:
        fh.write(f"gamma={result.critic.gamma!r}\n")
        fh.write("action_low=" + ",".join(repr(float(v)) for v in result.actor.action_low) + "\n")
        fh.write("action_high=" + ",".join(repr(float(v)) for v in result.actor.action_high) + "\n")


def load_agents(directory):
    """Return ``(model, critic, actor)`` saved by ``save_agents``."""
    model = koopman.load_model(directory)
    with open(os.path.join(directory, "agents.meta")) as fh:
        meta = dict(line.strip().split("=", 1) for line in fh if "=" in line)
    c_spec, theta_J = neural.load_params(os.path.join(directory, "critic.ckpt"))
    a_spec, theta_mu = neural.load_params(os.path.join(directory, "actor.ckpt"))
    low = np.array([float(v) for v in meta["action_low"].split(",")])
    high = np.array([float(v) for v in meta["action_high"].split(",")])
    critic = critic_mod.Critic(c_spec, theta_J, float(meta["gamma"]))
    return model, critic, actor_mod.Actor(a_spec, theta_mu, low, high)
