"""The numba kernels must agree with the numpy reference path."""

import os
import subprocess
import sys

import numpy as np
import pytest

from pgdk import _accel, neural

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba kernels not active")

SPECS = [
    neural.MlpSpec((2, 32, 8)),
    neural.MlpSpec((2, 64, 64, 1)),
    neural.MlpSpec((3, 4, 4, 2), activations=("identity", "tanh"), output="scaled_tanh", bound=3.0),
    neural.MlpSpec((2, 1)),
]


@needs_numba
@pytest.mark.parametrize("spec", SPECS, ids=lambda s: str(s.widths))
def test_kernels_agree(spec):
    rng = np.random.default_rng(0)
    p = neural.init_params(spec, 1) + 0.05 * rng.normal(size=spec.n_params)
    X = rng.normal(size=(spec.n_in, 17))
    cot = rng.normal(size=(spec.n_out, 17))
    w, f, k, b = spec._kernel_args
    t_np = _accel.forward_numpy(p, w, f, k, b, X)
    t_nb = _accel.forward_numba(p, w, f, k, b, X)
    np.testing.assert_allclose(t_nb, t_np, rtol=1e-12, atol=1e-13)
    g_np, d_np = _accel.backward_numpy(p, w, f, k, b, t_np, cot)
    g_nb, d_nb = _accel.backward_numba(p, w, f, k, b, t_np, cot)
    np.testing.assert_allclose(g_nb, g_np, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(d_nb, d_np, rtol=1e-12, atol=1e-13)


def test_backend_flag_selects_numpy():
    code = "from pgdk import _accel; print(_accel.BACKEND, _accel.forward is _accel.forward_numpy)"
    env = dict(os.environ, PGDK_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_backend_name_is_reported():
    assert _accel.BACKEND in ("numpy", "numba-reverse", "numba")
