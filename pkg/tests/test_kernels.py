"""The compiled loops and the numpy fallback must agree to rounding."""
import os
import subprocess
import sys

import numpy as np
import pytest

from selfint import _accel
from selfint import kernels as K


def _setup(rng, M=17, d=2, gamma=1.3, periodic=False):
    x = np.cumsum(rng.standard_normal((M, d)), axis=0)
    if not periodic:
        x[0] = 0.0
    w = 1.0 / (1.0 + (np.arange(M + 1) / 2.0) ** 1.5)
    if periodic:
        lag = np.arange(M)
        w = w[np.minimum(lag, M - lag)]
    return np.ascontiguousarray(x), np.ascontiguousarray(w)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("periodic", [False, True])
def test_loops_match_numpy(rng, gamma, periodic):
    x, w = _setup(rng, gamma=gamma, periodic=periodic)
    frad = K.power_radial(gamma)
    assert K.kinetic_loops(x, periodic) == pytest.approx(K.kinetic_numpy(x, periodic), rel=1e-12)
    assert K.pair_sum_loops(x, w, gamma) == pytest.approx(K.pair_sum_numpy(x, w, frad), rel=1e-12)
    p = x[5] + 0.3
    a = K.site_delta_loops(x, 5, p, w, gamma, 2.0, 0.7, periodic)
    b = K.site_delta_numpy(x, 5, p, w, frad, 2.0, 0.7, periodic)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)
    delta = np.array([0.4, -0.2])
    a = K.tail_delta_loops(x, 6, delta, w, gamma, 2.0, 0.7, periodic)
    b = K.tail_delta_numpy(x, 6, delta, w, frad, 2.0, 0.7, periodic)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("gamma", [1.0, 2.0])
def test_sweeps_match_numpy(rng, gamma):
    x, w = _setup(rng, gamma=gamma)
    M, d = x.shape
    steps = 0.5 * rng.standard_normal((M - 1, d))
    logu = np.log(rng.random(M - 1))
    frad = K.power_radial(gamma)
    xa, xb = x.copy(), x.copy()
    ra = K.site_sweep_loops(xa, 1, steps, logu, w, gamma, 2.0, 0.5, False, 1.0)
    rb = K.site_sweep_numpy(xb, 1, steps, logu, w, frad, 2.0, 0.5, False, 1.0)
    assert ra[0] == rb[0] and ra[2] == rb[2] == -1
    np.testing.assert_allclose(xa, xb, rtol=1e-12)
    xa, xb = x.copy(), x.copy()
    ra = K.tail_sweep_loops(xa, steps, logu, w, gamma, 2.0, 0.5, False, 1.0)
    rb = K.tail_sweep_numpy(xb, steps, logu, w, frad, 2.0, 0.5, False, 1.0)
    assert ra[0] == rb[0]
    np.testing.assert_allclose(xa, xb, rtol=1e-12)


def test_non_finite_delta_reported():
    x = np.zeros((4, 1))
    w = np.ones(5)
    steps = np.array([[1e300], [0.0], [0.0]])
    logu = np.zeros(3)
    for fn in (lambda: K.site_sweep_loops(x.copy(), 1, steps, logu, w, 2.0, 1.0, 1.0, False, 1.0),
               lambda: K.site_sweep_numpy(x.copy(), 1, steps, logu, w, K.power_radial(2.0), 1.0,
                                          1.0, False, 1.0)):
        with np.errstate(over="ignore", invalid="ignore"):
            assert fn()[2] == 1


def test_kernelset_custom_potential_uses_numpy():
    ks = K.KernelSet(1.0, f=lambda r: r)
    assert not ks.compiled
    assert K.KernelSet(1.0, force_numpy=True).compiled is False


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, SELFINT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from selfint import _accel; print(_accel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert _accel.BACKEND in ("numba", "numpy")
