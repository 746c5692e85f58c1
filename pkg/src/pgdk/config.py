"""Plain ``key=value`` run configuration.

One pair per line, ``#`` starts a comment. Keys of the form ``env.<name>``
override physical constants of the selected environment (for example
``env.u_max=2``). Every other key must be a ``TrainConfig`` field. Values
given as ``auto`` fall back to a dimension-dependent default.
"""

from dataclasses import asdict, dataclass, field, fields

from .envs import ENVIRONMENTS, make_env
from .errors import ConfigError
from .koopman import default_lifting_dim


def _widths(text):
    text = str(text).strip()
    if text in ("", "-"):
        return ()
    return tuple(int(w) for w in text.split(","))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class TrainConfig:
    env: str = "double_integrator"
    gamma: float = 0.99
    alpha_f: float = 1.0
    alpha_J: float = 0.5
    alpha_mu: float = 0.03
    lr_schedule: str = "constant"
    episodes: int = 300
    horizon: int = None
    batch: int = 64
    r: int = None
    # append the raw state to g(x); keeps C exact when tanh features saturate
    augment_state: bool = True
    noise_sigma0: float = 0.3
    noise_decay: float = 0.99
    seed: int = 0
    grad_clip: float = 1.0
    capacity: int = 5000
    rank_tol: float = 1e-10
    g_hidden: tuple = (32,)
    critic_hidden: tuple = (64, 64)
    actor_hidden: tuple = ()
    actor_zero_init: bool = True
    # train the policy's output-layer bias; off keeps it at its initial zero
    actor_output_bias: bool = False
    critic_zero_init: bool = True
    eval_episodes: int = 20
    sysid_iters: int = 300
    gradcheck_trials: int = 20
    env_params: dict = field(default_factory=dict)

    def make_env(self):
        return make_env(self.env, **self.env_params)

    def resolved(self):
        """Copy with ``horizon`` and ``r`` filled in from the environment."""
        env = self.make_env()
        out = TrainConfig(**asdict(self))
        if out.horizon is None:
            out.horizon = env.spec.horizon
        if out.r is None:
            out.r = default_lifting_dim(env.spec.n)
        return out

    def alphas(self, i):
        """Step sizes ``(alpha_f, alpha_J, alpha_mu)`` at update iteration ``i`` (0-based)."""
        if self.lr_schedule == "inv_sqrt":
            s = (i + 1) ** -0.5
            return self.alpha_f * s, self.alpha_J * s, self.alpha_mu * s
        return self.alpha_f, self.alpha_J, self.alpha_mu

    def validate(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        env = self.make_env()
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("alpha_f", "alpha_J", "alpha_mu", "grad_clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_schedule not in ("constant", "inv_sqrt"):
            raise ConfigError("lr_schedule must be 'constant' or 'inv_sqrt'")
        # both schedules scale all three rates by the same factor, so checking
        # the base values enforces the ordering at every iteration
        if not self.alpha_f > self.alpha_J > self.alpha_mu:
            raise ConfigError(
                "learning rates must satisfy alpha_f > alpha_J > alpha_mu "
                "(dynamics model converges first, then the value function, then the policy); "
                f"got alpha_f={self.alpha_f}, alpha_J={self.alpha_J}, alpha_mu={self.alpha_mu}"
            )
        if self.noise_sigma0 < 0 or not 0.0 < self.noise_decay <= 1.0:
            raise ConfigError("need noise_sigma0 >= 0 and noise_decay in (0, 1]")
        for name in ("episodes", "batch", "capacity", "eval_episodes", "gradcheck_trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        r = default_lifting_dim(env.spec.n) if self.r is None else self.r
        if r < 1:
            raise ConfigError("r must be at least 1")
        r_tot = r + (env.spec.n if self.augment_state else 0)
        if self.batch < r_tot + env.spec.m:
            raise ConfigError(
                f"batch={self.batch} is smaller than r+m={r_tot + env.spec.m}; "
                "the least-squares fit of A, B needs at least that many samples"
            )
        if self.capacity < self.batch:
            raise ConfigError("capacity must be at least batch")
        return self


_PARSERS = {
    "env": str, "gamma": float, "alpha_f": float, "alpha_J": float, "alpha_mu": float,
    "lr_schedule": str, "episodes": int, "horizon": int, "batch": int, "r": int,
    "augment_state": _bool, "noise_sigma0": float, "noise_decay": float, "seed": int,
    "grad_clip": float, "capacity": int, "rank_tol": float, "g_hidden": _widths,
    "critic_hidden": _widths, "actor_hidden": _widths,
    "actor_zero_init": _bool, "actor_output_bias": _bool, "critic_zero_init": _bool,
    "eval_episodes": int,
    "sysid_iters": int, "gradcheck_trials": int,
}
_AUTO = {"horizon", "r"}
assert set(_PARSERS) == {f.name for f in fields(TrainConfig)} - {"env_params"}


def _env_value(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _apply(values, key, raw, where):
    key = key.strip()
    raw = raw.strip()
    if key.startswith("env."):
        values["env_params"][key[4:]] = _env_value(raw)
        return
    if key not in _PARSERS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    if key in _AUTO and raw.lower() == "auto":
        values[key] = None
        return
    try:
        values[key] = _PARSERS[key](raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {key}={raw!r} ({exc})") from None


def _split(line, where):
    if "=" not in line:
        raise ConfigError(f"{where}: expected key=value, got {line!r}")
    return line.split("=", 1)


def parse_config(path=None, overrides=()):
    """Build a validated ``TrainConfig`` from a file and ``key=value`` overrides.

    Absent keys keep their defaults; overrides are applied after the file.
    """
    values = asdict(TrainConfig())
    values["env_params"] = {}
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for no, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{path}:{no}"
            _apply(values, *_split(line, where), where)
    for k, item in enumerate(overrides, start=1):
        where = f"override #{k}"
        _apply(values, *_split(item, where), where)
    cfg = TrainConfig(**values)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except Exception as exc:  # env constructor rejecting a parameter value
        raise ConfigError(str(exc)) from exc


def format_config(cfg):
    """Inverse of ``parse_config``: one ``key=value`` line per field."""
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if f.name == "env_params":
            for k in sorted(v):
                lines.append(f"env.{k}={v[k]!r}" if isinstance(v[k], float) else f"env.{k}={v[k]}")
            continue
        if v is None:
            text = "auto"
        elif isinstance(v, tuple):
            text = ",".join(map(str, v)) or "-"
        elif isinstance(v, bool):
            text = str(int(v))
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"
