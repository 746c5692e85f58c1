"""Batched MLP kernels with a numba path and a pure-numpy fallback.

Backend selection reads ``PGDK_NUMBA`` once, at import:

* ``0`` -- pure numpy for both passes;
* ``1`` (default) -- numba reverse pass, numpy forward pass;
* ``full`` -- numba for both passes.

The default mix follows ``benchmarks/bench_kernels.py``: the numba reverse
pass beats BLAS-backed numpy at these widths, but the numba forward pass is
slower because its scalar ``tanh`` cannot match numpy's vectorized one.
Without an importable numba every setting falls back to numpy.

Both paths share one calling convention. A network is described by

* ``params``  -- flat float64 vector, layer by layer, weights row-major
  (out x in) followed by biases;
* ``widths``  -- int64 array of layer widths, input first;
* ``hidden_tanh`` -- int64 array, one flag per hidden layer (1 = tanh,
  0 = identity);
* ``out_kind``/``bound`` -- output head, 0 = identity, 1 = ``bound*tanh``.

``forward`` returns a tape holding every post-activation, stacked row-wise
(shape ``(sum(widths), N)``). ``backward`` consumes the tape, so no
pre-activations are stored: tanh derivatives are recovered as ``1 - a**2``.
"""

import os

import numpy as np

OUT_IDENTITY = 0
OUT_SCALED_TANH = 1


MODE = os.environ.get("PGDK_NUMBA", "1").strip().lower()
if MODE in ("false", "no", "off"):
    MODE = "0"

try:
    if MODE == "0":
        raise ImportError("numba disabled by PGDK_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def forward_numpy(params, widths, hidden_tanh, out_kind, bound, X):
    L = widths.shape[0] - 1
    N = X.shape[1]
    tape = np.empty((int(widths.sum()), N))
    tape[: widths[0]] = X
    p_off = 0
    a_off = 0
    h = X
    for l in range(L):
        w_in = widths[l]
        w_out = widths[l + 1]
        W = params[p_off:p_off + w_out * w_in].reshape(w_out, w_in)
        p_off += w_out * w_in
        b = params[p_off:p_off + w_out]
        p_off += w_out
        z = W @ h + b[:, None]
        if l < L - 1:
            h = np.tanh(z) if hidden_tanh[l] else z
        elif out_kind == OUT_SCALED_TANH:
            h = bound * np.tanh(z)
        else:
            h = z
        a_off += w_in
        tape[a_off:a_off + w_out] = h
    return tape


def backward_numpy(params, widths, hidden_tanh, out_kind, bound, tape, cot):
    L = widths.shape[0] - 1
    grad = np.zeros_like(params)
    # offsets of each layer's params and activations
    p_offs = np.zeros(L + 1, dtype=np.int64)
    for l in range(L):
        p_offs[l + 1] = p_offs[l] + widths[l + 1] * widths[l] + widths[l + 1]
    a_offs = np.concatenate(([0], np.cumsum(widths)))

    y = tape[a_offs[L]:a_offs[L + 1]]
    if out_kind == OUT_SCALED_TANH:
        delta = cot * (bound - y * y / bound)
    else:
        delta = cot.copy()
    for l in range(L - 1, -1, -1):
        w_in = widths[l]
        w_out = widths[l + 1]
        po = p_offs[l]
        W = params[po:po + w_out * w_in].reshape(w_out, w_in)
        a_prev = tape[a_offs[l]:a_offs[l + 1]]
        grad[po:po + w_out * w_in] = (delta @ a_prev.T).ravel()
        grad[po + w_out * w_in:po + w_out * w_in + w_out] = delta.sum(axis=1)
        da = W.T @ delta
        if l > 0 and hidden_tanh[l - 1]:
            da *= 1.0 - a_prev * a_prev
        delta = da
    return grad, delta


if HAVE_NUMBA:

    # loops keep the batch index innermost: tape rows are contiguous in k

    @njit(cache=True, fastmath=True)
    def forward_numba(params, widths, hidden_tanh, out_kind, bound, X):
        L = widths.shape[0] - 1
        N = X.shape[1]
        total = 0
        for l in range(L + 1):
            total += widths[l]
        tape = np.empty((total, N))
        tape[:widths[0], :] = X
        acc = np.empty(N)
        p_off = 0
        a_in = 0
        for l in range(L):
            w_in = widths[l]
            w_out = widths[l + 1]
            b_off = p_off + w_out * w_in
            a_out = a_in + w_in
            src = tape[a_in:a_out]
            for j in range(w_out):
                row = p_off + j * w_in
                acc[:] = params[b_off + j]
                for i in range(w_in):
                    w = params[row + i]
                    si = src[i]
                    for k in range(N):
                        acc[k] += w * si[k]
                dst = tape[a_out + j]
                if l < L - 1 and hidden_tanh[l] == 0:
                    dst[:] = acc
                elif l < L - 1:
                    dst[:] = np.tanh(acc)
                elif out_kind == 1:
                    dst[:] = bound * np.tanh(acc)
                else:
                    dst[:] = acc
            p_off = b_off + w_out
            a_in = a_out
        return tape

    @njit(cache=True, fastmath=True)
    def backward_numba(params, widths, hidden_tanh, out_kind, bound, tape, cot):
        L = widths.shape[0] - 1
        N = tape.shape[1]
        grad = np.zeros(params.shape[0])
        p_offs = np.zeros(L + 1, dtype=np.int64)
        a_offs = np.zeros(L + 2, dtype=np.int64)
        for l in range(L):
            p_offs[l + 1] = p_offs[l] + widths[l + 1] * widths[l] + widths[l + 1]
        for l in range(L + 1):
            a_offs[l + 1] = a_offs[l] + widths[l]

        w_last = widths[L]
        delta = np.empty((w_last, N))
        for j in range(w_last):
            for k in range(N):
                if out_kind == 1:
                    y = tape[a_offs[L] + j, k]
                    delta[j, k] = cot[j, k] * (bound - y * y / bound)
                else:
                    delta[j, k] = cot[j, k]
        for l in range(L - 1, -1, -1):
            w_in = widths[l]
            w_out = widths[l + 1]
            po = p_offs[l]
            bo = po + w_out * w_in
            ao = a_offs[l]
            da = np.zeros((w_in, N))
            for j in range(w_out):
                row = po + j * w_in
                sb = 0.0
                for k in range(N):
                    sb += delta[j, k]
                grad[bo + j] = sb
                for i in range(w_in):
                    s = 0.0
                    wji = params[row + i]
                    for k in range(N):
                        d = delta[j, k]
                        s += d * tape[ao + i, k]
                        da[i, k] += wji * d
                    grad[row + i] = s
            if l > 0 and hidden_tanh[l - 1]:
                for i in range(w_in):
                    for k in range(N):
                        a = tape[ao + i, k]
                        da[i, k] *= 1.0 - a * a
            delta = da
        return grad, delta

    forward = forward_numba if MODE == "full" else forward_numpy
    backward = backward_numba
    BACKEND = "numba" if MODE == "full" else "numba-reverse"
else:
    forward = forward_numpy
    backward = backward_numpy
    BACKEND = "numpy"
