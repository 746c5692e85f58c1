"""Dense matrix helpers: SVD pseudoinverse, Frobenius norm, numerical rank.

Matrices are plain C-ordered float64 ``numpy`` arrays.
"""

import numpy as np

from .errors import InvalidInput

DEFAULT_TOL = 1e-10


def as_matrix(m, name="matrix"):
    a = np.array(m, dtype=np.float64, order="C", ndmin=2)
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def as_vector(v, name="vector", size=None):
    a = np.array(v, dtype=np.float64).reshape(-1)
    if size is not None and a.shape[0] != size:
        raise InvalidInput(f"{name} must have length {size}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def pinv(m, tol=DEFAULT_TOL):
    """Moore-Penrose pseudoinverse by full SVD.

    Singular values at or below ``tol * s_max`` are treated as zero.
    """
    a = as_matrix(m)
    if tol < 0:
        raise InvalidInput("tol must be nonnegative")
    rows, cols = a.shape
    if a.size == 0:
        return np.zeros((cols, rows))
    U, s, Vt = np.linalg.svd(a, full_matrices=False)
    cutoff = tol * s[0] if s.size else 0.0
    keep = s > cutoff
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


def frobenius_norm(m):
    a = as_matrix(m)
    return float(np.sqrt(np.sum(a * a)))


def singular_values(m):
    a = as_matrix(m)
    if a.size == 0:
        return np.zeros(0)
    return np.linalg.svd(a, compute_uv=False)


def row_rank(m, tol=DEFAULT_TOL):
    """Number of singular values strictly above ``tol`` times the largest."""
    s = singular_values(m)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
