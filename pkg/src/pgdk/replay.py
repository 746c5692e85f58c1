"""Bounded FIFO replay buffer with seeded uniform sampling."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, InvalidInput, ParseError
from .koopman import DataBatch

DEFAULT_CAPACITY = 100_000


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    u: np.ndarray
    cost: float
    x_next: np.ndarray

    def __post_init__(self):
        for name in ("x", "u", "x_next"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        object.__setattr__(self, "cost", float(self.cost))
        if self.x.shape != self.x_next.shape:
            raise InvalidInput("x and x_next must have the same length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.u))
                and np.all(np.isfinite(self.x_next)) and np.isfinite(self.cost)):
            raise InvalidInput("transition has non-finite entries")
        if self.cost < 0:
            raise InvalidInput(f"stage cost must be nonnegative, got {self.cost}")


class ReplayBuffer:
    """Ring buffer over preallocated arrays; the oldest tuple is evicted first.

    Sampling draws without replacement from a generator seeded once at
    construction, so a buffer fed the same pushes and asked for the same
    batch sizes returns the same batches.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY, rng_seed=0):
        if capacity < 1:
            raise InvalidInput("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(rng_seed)
        self._start = 0
        self._size = 0
        self._X = self._U = self._c = self._Xn = None

    def __len__(self):
        return self._size

    @property
    def dims(self):
        if self._X is None:
            return None
        return self._X.shape[1], self._U.shape[1]

    def _allocate(self, n, m):
        cap = self.capacity
        self._X = np.empty((cap, n))
        self._U = np.empty((cap, m))
        self._c = np.empty(cap)
        self._Xn = np.empty((cap, n))

    def push(self, t):
        if not isinstance(t, Transition):
            t = Transition(*t)
        if self._X is None:
            self._allocate(t.x.shape[0], t.u.shape[0])
        elif (t.x.shape[0], t.u.shape[0]) != self.dims:
            raise InvalidInput(f"transition dims {(t.x.shape[0], t.u.shape[0])} != buffer dims {self.dims}")
        if self._size < self.capacity:
            slot = (self._start + self._size) % self.capacity
            self._size += 1
        else:
            slot = self._start
            self._start = (self._start + 1) % self.capacity
        self._X[slot] = t.x
        self._U[slot] = t.u
        self._c[slot] = t.cost
        self._Xn[slot] = t.x_next
        return self

    def _physical(self, logical):
        return (self._start + np.asarray(logical)) % self.capacity

    def __getitem__(self, i):
        if not -self._size <= i < self._size:
            raise IndexError(i)
        j = int(self._physical(i % self._size))
        return Transition(self._X[j].copy(), self._U[j].copy(), self._c[j], self._Xn[j].copy())

    def __iter__(self):
        for i in range(self._size):
            yield self[i]

    def batch_of(self, logical):
        j = self._physical(logical)
        return DataBatch(self._X[j].T, self._Xn[j].T, self._U[j].T, self._c[j])

    def sample_batch(self, n_samples):
        if n_samples > self._size:
            raise InsufficientData(f"buffer holds {self._size} tuples, {n_samples} requested")
        idx = self.rng.choice(self._size, size=n_samples, replace=False)
        return self.batch_of(idx)

    def all(self):
        return self.batch_of(np.arange(self._size))


def dump_csv(path, transitions):
    """Write transitions as ``x..., u..., cost, x_next...`` rows under a named header."""
    rows = list(transitions)
    if not rows:
        raise InvalidInput("nothing to dump")
    n, m = rows[0].x.shape[0], rows[0].u.shape[0]
    header = ([f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + ["cost"]
              + [f"xn{i}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in rows:
            w.writerow([repr(float(v)) for v in (*t.x, *t.u, t.cost, *t.x_next)])


def load_csv(path):
    """Read a dump written by ``dump_csv``; errors name the 1-based file line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        n = sum(1 for h in header if h.startswith("x") and not h.startswith("xn"))
        m = sum(1 for h in header if h.startswith("u"))
        expected = [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + ["cost"] + [
            f"xn{i}" for i in range(n)]
        if header != expected or n == 0 or m == 0:
            raise ParseError(f"{path}: line 1: unexpected header {header}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 * n + m + 1:
                raise ParseError(f"{path}: line {line_no}: expected {2 * n + m + 1} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
                out.append(Transition(vals[:n], vals[n:n + m], vals[n + m], vals[n + m + 1:]))
            except (ValueError, InvalidInput) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from exc
    return out
