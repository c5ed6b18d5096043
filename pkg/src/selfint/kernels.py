"""Hot inner loops: pair sums, Metropolis deltas and sweeps.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version.  The loop versions only support the power-law
potential ``|z|**gamma``; arbitrary radial potentials always go through numpy.

Sites are stored as an ``(M, d)`` array.  For pinned paths ``M = N + 1`` and
site 0 is held at the origin; for periodic paths ``M = N`` and the bond
``(M - 1, 0)`` closes the loop.  ``w[l]`` is the interaction weight of two
sites ``l`` grid steps apart (already folded to the cyclic distance in the
periodic case).  ``coef`` is ``alpha / n_per_unit**2`` and ``nt`` is
``n_per_unit``.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit


# Reassociation and contraction only: "nnan"/"ninf" are left out so the
# isfinite checks on energy deltas stay meaningful.
_FAST = {"reassoc", "contract", "arcp", "nsz", "afn"}


# ---------------------------------------------------------------------------
# explicit loops (numba)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, fastmath=_FAST)
def _sq_rows(x, i, j):
    s = 0.0
    for c in range(x.shape[1]):
        diff = x[i, c] - x[j, c]
        s += diff * diff
    return s


@njit(cache=True, nogil=True, fastmath=_FAST)
def _sq_point(p, x, j):
    s = 0.0
    for c in range(x.shape[1]):
        diff = p[c] - x[j, c]
        s += diff * diff
    return s


@njit(cache=True, nogil=True, fastmath=_FAST)
def _sq_shifted(x, j, delta, i):
    s = 0.0
    for c in range(x.shape[1]):
        diff = x[j, c] + delta[c] - x[i, c]
        s += diff * diff
    return s


@njit(cache=True, nogil=True, fastmath=_FAST)
def _rpow(sq, gamma):
    if gamma == 2.0:
        return sq
    if gamma == 1.0:
        return math.sqrt(sq)
    if sq == 0.0:
        return 0.0
    return sq ** (0.5 * gamma)


@njit(cache=True, nogil=True, fastmath=_FAST)
def kinetic_loops(x, periodic):
    M = x.shape[0]
    s = 0.0
    for j in range(1, M):
        s += _sq_rows(x, j, j - 1)
    if periodic:
        s += _sq_rows(x, 0, M - 1)
    return s


@njit(cache=True, nogil=True, fastmath=_FAST)
def pair_sum_loops(x, w, gamma):
    M = x.shape[0]
    s = 0.0
    for i in range(M):
        for j in range(i + 1, M):
            s += w[j - i] * _rpow(_sq_rows(x, i, j), gamma)
    return s


@njit(cache=True, nogil=True, fastmath=_FAST)
def site_delta_loops(x, i, p, w, gamma, nt, coef, periodic):
    M = x.shape[0]
    dk = 0.0
    if i > 0 or periodic:
        j = i - 1 if i > 0 else M - 1
        dk += _sq_point(p, x, j) - _sq_rows(x, i, j)
    if i < M - 1 or periodic:
        j = i + 1 if i < M - 1 else 0
        dk += _sq_point(p, x, j) - _sq_rows(x, i, j)
    di = 0.0
    for j in range(M):
        if j == i:
            continue
        l = i - j if i > j else j - i
        di += w[l] * (_rpow(_sq_point(p, x, j), gamma) - _rpow(_sq_rows(x, i, j), gamma))
    return 0.5 * nt * dk + coef * di


@njit(cache=True, nogil=True, fastmath=_FAST)
def tail_delta_loops(x, k, delta, w, gamma, nt, coef, periodic):
    M = x.shape[0]
    dk = _sq_shifted(x, k, delta, k - 1) - _sq_rows(x, k, k - 1)
    if periodic:
        dk += _sq_shifted(x, M - 1, delta, 0) - _sq_rows(x, M - 1, 0)
    di = 0.0
    for i in range(k):
        for j in range(k, M):
            di += w[j - i] * (_rpow(_sq_shifted(x, j, delta, i), gamma)
                              - _rpow(_sq_rows(x, j, i), gamma))
    return 0.5 * nt * dk + coef * di


@njit(cache=True, nogil=True, fastmath=_FAST)
def site_sweep_loops(x, first, steps, logu, w, gamma, nt, coef, periodic, sign):
    """One systematic pass of single-site moves over sites ``first..M-1``.

    Returns ``(accepted, energy_change, bad_site)``; ``bad_site >= 0`` marks a
    non-finite delta and the pass stops there with ``x`` untouched at that site.
    """
    M, d = x.shape
    p = np.empty(d)
    accepted = 0
    total = 0.0
    for n in range(M - first):
        i = first + n
        for c in range(d):
            p[c] = x[i, c] + steps[n, c]
        dE = site_delta_loops(x, i, p, w, gamma, nt, coef, periodic)
        if not math.isfinite(dE):
            return accepted, total, i
        if sign * dE <= 0.0 or logu[n] < -sign * dE:
            for c in range(d):
                x[i, c] = p[c]
            accepted += 1
            total += dE
    return accepted, total, -1


@njit(cache=True, nogil=True, fastmath=_FAST)
def tail_sweep_loops(x, shifts, logu, w, gamma, nt, coef, periodic, sign):
    """Whole-tail shift proposals ``x[k:] += shifts[k-1]`` for ``k = 1..M-1``."""
    M, d = x.shape
    accepted = 0
    total = 0.0
    for k in range(1, M):
        delta = shifts[k - 1]
        dE = tail_delta_loops(x, k, delta, w, gamma, nt, coef, periodic)
        if not math.isfinite(dE):
            return accepted, total, k
        if sign * dE <= 0.0 or logu[k - 1] < -sign * dE:
            for j in range(k, M):
                for c in range(d):
                    x[j, c] += delta[c]
            accepted += 1
            total += dE
    return accepted, total, -1


# ---------------------------------------------------------------------------
# vectorized numpy
# ---------------------------------------------------------------------------

def power_radial(gamma):
    """Map squared distances to ``|z|**gamma``."""
    if gamma == 2.0:
        return lambda sq: sq
    half = 0.5 * gamma
    return lambda sq: np.power(sq, half)


def user_radial(f):
    """Map squared distances to a user radial profile ``f(|z|)``."""
    return lambda sq: np.asarray(f(np.sqrt(sq)), dtype=float)


def kinetic_numpy(x, periodic):
    s = float(np.sum((x[1:] - x[:-1]) ** 2))
    if periodic:
        s += float(np.sum((x[0] - x[-1]) ** 2))
    return s


def pair_sum_numpy(x, w, frad):
    M = x.shape[0]
    s = 0.0
    for l in range(1, M):
        sq = np.sum((x[l:] - x[:-l]) ** 2, axis=1)
        s += w[l] * float(np.sum(frad(sq)))
    return s


def site_delta_numpy(x, i, p, w, frad, nt, coef, periodic):
    M = x.shape[0]
    dk = 0.0
    if i > 0 or periodic:
        j = i - 1 if i > 0 else M - 1
        dk += float(np.sum((p - x[j]) ** 2) - np.sum((x[i] - x[j]) ** 2))
    if i < M - 1 or periodic:
        j = i + 1 if i < M - 1 else 0
        dk += float(np.sum((p - x[j]) ** 2) - np.sum((x[i] - x[j]) ** 2))
    wj = w[np.abs(np.arange(M) - i)].copy()
    wj[i] = 0.0
    new = frad(np.sum((p - x) ** 2, axis=1))
    old = frad(np.sum((x[i] - x) ** 2, axis=1))
    new[i] = old[i] = 0.0
    return 0.5 * nt * dk + coef * float(wj @ (new - old))


def tail_delta_numpy(x, k, delta, w, frad, nt, coef, periodic):
    M = x.shape[0]
    dk = float(np.sum((x[k] + delta - x[k - 1]) ** 2) - np.sum((x[k] - x[k - 1]) ** 2))
    if periodic:
        dk += float(np.sum((x[M - 1] + delta - x[0]) ** 2) - np.sum((x[M - 1] - x[0]) ** 2))
    left, right = x[:k], x[k:]
    diff = right[None, :, :] - left[:, None, :]
    lag = np.arange(k, M)[None, :] - np.arange(k)[:, None]
    old = frad(np.sum(diff ** 2, axis=2))
    new = frad(np.sum((diff + delta) ** 2, axis=2))
    return 0.5 * nt * dk + coef * float(np.sum(w[lag] * (new - old)))


def site_sweep_numpy(x, first, steps, logu, w, frad, nt, coef, periodic, sign):
    M = x.shape[0]
    accepted = 0
    total = 0.0
    for n in range(M - first):
        i = first + n
        p = x[i] + steps[n]
        dE = site_delta_numpy(x, i, p, w, frad, nt, coef, periodic)
        if not math.isfinite(dE):
            return accepted, total, i
        if sign * dE <= 0.0 or logu[n] < -sign * dE:
            x[i] = p
            accepted += 1
            total += dE
    return accepted, total, -1


def tail_sweep_numpy(x, shifts, logu, w, frad, nt, coef, periodic, sign):
    M = x.shape[0]
    accepted = 0
    total = 0.0
    for k in range(1, M):
        dE = tail_delta_numpy(x, k, shifts[k - 1], w, frad, nt, coef, periodic)
        if not math.isfinite(dE):
            return accepted, total, k
        if sign * dE <= 0.0 or logu[k - 1] < -sign * dE:
            x[k:] += shifts[k - 1]
            accepted += 1
            total += dE
    return accepted, total, -1


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

class KernelSet:
    """Bound kernels for one potential.

    Uses the compiled loops when numba is active and the potential is the
    plain power law; numpy otherwise.
    """

    def __init__(self, gamma, f=None, force_numpy=False):
        self.gamma = float(gamma)
        self.compiled = USE_NUMBA and f is None and not force_numpy
        self.frad = power_radial(self.gamma) if f is None else user_radial(f)

    def kinetic(self, x, periodic):
        if self.compiled:
            return kinetic_loops(x, periodic)
        return kinetic_numpy(x, periodic)

    def pair_sum(self, x, w):
        if self.compiled:
            return pair_sum_loops(x, w, self.gamma)
        return pair_sum_numpy(x, w, self.frad)

    def site_delta(self, x, i, p, w, nt, coef, periodic):
        if self.compiled:
            return site_delta_loops(x, i, p, w, self.gamma, nt, coef, periodic)
        return site_delta_numpy(x, i, p, w, self.frad, nt, coef, periodic)

    def tail_delta(self, x, k, delta, w, nt, coef, periodic):
        if self.compiled:
            return tail_delta_loops(x, k, delta, w, self.gamma, nt, coef, periodic)
        return tail_delta_numpy(x, k, delta, w, self.frad, nt, coef, periodic)

    def site_sweep(self, x, first, steps, logu, w, nt, coef, periodic, sign=1.0):
        if self.compiled:
            return site_sweep_loops(x, first, steps, logu, w, self.gamma, nt, coef,
                                    periodic, sign)
        return site_sweep_numpy(x, first, steps, logu, w, self.frad, nt, coef,
                                periodic, sign)

    def tail_sweep(self, x, shifts, logu, w, nt, coef, periodic, sign=1.0):
        if self.compiled:
            return tail_sweep_loops(x, shifts, logu, w, self.gamma, nt, coef,
                                    periodic, sign)
        return tail_sweep_numpy(x, shifts, logu, w, self.frad, nt, coef,
                                periodic, sign)
