"""Dimension-headed binary dumps for dense matrices.

File layout: ``matrix <name> rows=<r> cols=<c>\\n`` followed by ``r*c``
little-endian float64 values in row-major order.
"""

import numpy as np

from .errors import ParseError


def save_matrix(path, name, M):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2:
        M = M.reshape(1, -1)
    with open(path, "wb") as fh:
        fh.write(f"matrix {name} rows={M.shape[0]} cols={M.shape[1]}\n".encode("ascii"))
        fh.write(M.astype("<f8").tobytes())


def load_matrix(path):
    """Return ``(name, matrix)``."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    try:
        if header[0] != "matrix":
            raise ValueError("missing 'matrix' tag")
        name = header[1]
        fields = dict(item.split("=", 1) for item in header[2:])
        rows, cols = int(fields["rows"]), int(fields["cols"])
    except (IndexError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad matrix header ({exc})") from exc
    data = np.frombuffer(payload, dtype="<f8")
    if data.shape[0] != rows * cols:
        raise ParseError(f"{path}: expected {rows * cols} values, found {data.shape[0]}")
    return name, data.astype(np.float64).reshape(rows, cols)
