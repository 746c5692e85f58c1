"""Small fully connected networks with exact reverse-mode derivatives.

Parameters live in one flat float64 vector. Layout, layer by layer::

    W_1 (row-major, out x in), b_1, W_2, b_2, ...

Hidden layers use tanh (or identity) and the output head is either the
identity or ``bound * tanh``. All activations are smooth, so every network
built here is twice differentiable in both its input and its parameters.

Batched entry points take states as columns: ``X`` has shape ``(in, N)``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _accel
from .errors import InvalidInput, ParseError

HIDDEN_ACTIVATIONS = ("tanh", "identity")
OUTPUT_HEADS = ("identity", "scaled_tanh")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activations: tuple = None
    output: str = "identity"
    bound: float = 1.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInput(f"need >= 2 positive widths, got {widths}")
        acts = self.activations
        if acts is None:
            acts = ("tanh",) * (len(widths) - 2)
        elif isinstance(acts, str):
            acts = (acts,) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2:
            raise InvalidInput(f"{len(widths) - 2} hidden layers but {len(acts)} activations")
        for a in acts:
            if a not in HIDDEN_ACTIVATIONS:
                raise InvalidInput(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)
        if self.output not in OUTPUT_HEADS:
            raise InvalidInput(f"unknown output head {self.output!r}")
        bound = float(self.bound)
        if self.output == "scaled_tanh" and not bound > 0:
            raise InvalidInput("scaled_tanh bound must be positive")
        object.__setattr__(self, "bound", bound)

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    @cached_property
    def n_params(self):
        return sum(o * i + o for i, o in zip(self.widths[:-1], self.widths[1:]))

    @cached_property
    def _kernel_args(self):
        widths = np.array(self.widths, dtype=np.int64)
        flags = np.array([a == "tanh" for a in self.activations], dtype=np.int64)
        kind = _accel.OUT_SCALED_TANH if self.output == "scaled_tanh" else _accel.OUT_IDENTITY
        return widths, flags, kind, self.bound

    def layer_slices(self):
        """Yield ``(weight_slice, bias_slice, (out, in))`` per layer."""
        off = 0
        for i, o in zip(self.widths[:-1], self.widths[1:]):
            yield slice(off, off + o * i), slice(off + o * i, off + o * i + o), (o, i)
            off += o * i + o


def init_params(spec, seed):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for w_sl, _, (o, i) in spec.layer_slices():
        lim = 1.0 / np.sqrt(i)
        theta[w_sl] = rng.uniform(-lim, lim, size=o * i)
    return theta


def _check_params(spec, params):
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise InvalidInput(f"expected {spec.n_params} parameters, got shape {params.shape}")
    return params


def _check_batch(X, rows, name):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != rows:
        raise InvalidInput(f"{name} must have {rows} rows, got shape {X.shape}")
    return X


def forward_tape(spec, params, X):
    """Run the batch forward pass and keep every activation for ``vjp``."""
    params = _check_params(spec, params)
    X = _check_batch(X, spec.n_in, "input batch")
    widths, flags, kind, bound = spec._kernel_args
    return _accel.forward(params, widths, flags, kind, bound, X)


def output_of(spec, tape):
    return tape[tape.shape[0] - spec.n_out:]


def forward_batch(spec, params, X):
    return output_of(spec, forward_tape(spec, params, X)).copy()


def forward(spec, params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.n_in:
        raise InvalidInput(f"input must have length {spec.n_in}, got shape {x.shape}")
    return forward_batch(spec, params, x[:, None])[:, 0]


def vjp_tape(spec, params, tape, cot):
    """Reverse pass over a stored tape.

    Returns ``(grad_params, grad_input)`` where ``grad_params`` is summed over
    the batch columns and ``grad_input`` keeps one column per sample.
    """
    params = _check_params(spec, params)
    cot = _check_batch(cot, spec.n_out, "cotangent")
    if cot.shape[1] != tape.shape[1]:
        raise InvalidInput("cotangent and tape disagree on batch size")
    widths, flags, kind, bound = spec._kernel_args
    return _accel.backward(params, widths, flags, kind, bound, tape, cot)


def vjp_batch(spec, params, X, cot):
    return vjp_tape(spec, params, forward_tape(spec, params, X), cot)


def vjp(spec, params, x, cotangent):
    """``cotangent' d(out)/d(params)`` and ``cotangent' d(out)/d(x)`` at one input."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(cotangent, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.n_in:
        raise InvalidInput(f"input must have length {spec.n_in}, got shape {x.shape}")
    if c.ndim != 1 or c.shape[0] != spec.n_out:
        raise InvalidInput(f"cotangent must have length {spec.n_out}, got shape {c.shape}")
    gp, gx = vjp_batch(spec, params, x[:, None], c[:, None])
    return gp, gx[:, 0]


# -- checkpoints ---------------------------------------------------------------
#
# One header line of key=value text, then the raw little-endian float64
# parameter bytes. The bound is written with repr() so it round-trips exactly.

def _spec_header(spec):
    return (
        f"mlp widths={','.join(map(str, spec.widths))} "
        f"activations={','.join(spec.activations) or '-'} "
        f"output={spec.output} bound={spec.bound!r} count={spec.n_params}\n"
    )


def save_params(path, spec, params):
    params = _check_params(spec, params)
    with open(path, "wb") as fh:
        fh.write(_spec_header(spec).encode("ascii"))
        fh.write(params.astype("<f8").tobytes())


def load_params(path):
    """Return ``(spec, params)`` from a checkpoint written by ``save_params``."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if not header or header[0] != "mlp":
        raise ParseError(f"{path}: not an mlp checkpoint")
    try:
        fields = dict(item.split("=", 1) for item in header[1:])
        widths = tuple(int(w) for w in fields["widths"].split(","))
        acts = () if fields["activations"] == "-" else tuple(fields["activations"].split(","))
        spec = MlpSpec(widths, acts, fields["output"], float(fields["bound"]))
        count = int(fields["count"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad header ({exc})") from exc
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if params.shape[0] != count or count != spec.n_params:
        raise ParseError(f"{path}: expected {count} parameters, found {params.shape[0]}")
    return spec, params
