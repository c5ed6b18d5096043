"""Linear path functionals as weight vectors over the ``N + 1`` grid points.

Time integrals use the trapezoid rule on the grid, so a functional ``v`` acts
on a path by ``v @ points`` (per coordinate).
"""
import numpy as np


def _check_dyadic(T):
    if T < 1 or T & (T - 1):
        raise ValueError(f"T = {T} is not a power of two")


def integral_weights(n_points, n_per_unit, a, b):
    """Trapezoid weights for ``int_a^b x_s ds`` with integer unit times ``a < b``."""
    w = np.zeros(n_points)
    i0, i1 = a * n_per_unit, b * n_per_unit
    w[i0:i1 + 1] = 1.0 / n_per_unit
    w[i0] *= 0.5
    w[i1] *= 0.5
    return w


def point(spec, m):
    w = np.zeros(spec.N + 1)
    w[m] = 1.0
    return w


def increment(spec, m, n):
    """``x_m - x_n`` at grid indices ``m, n``."""
    return point(spec, m) - point(spec, n)


def endpoint(spec):
    return point(spec, spec.N)


def sigma(spec, i):
    """``sigma_i = int_i^{i+1} x_s ds``."""
    return integral_weights(spec.N + 1, spec.n_per_unit, i, i + 1)


def block_integral(spec, start, length):
    return integral_weights(spec.N + 1, spec.n_per_unit, start, start + length)


def s_block(spec, u, length):
    """``s_u^L``: integral over the second half of ``[u, u+L]`` minus the first half."""
    if length < 2 or length % 2:
        raise ValueError("block length must be an even integer >= 2")
    h = length // 2
    return block_integral(spec, u + h, h) - block_integral(spec, u, h)


def s_bar(spec, u, length):
    """Averaged increment ``s_u^L / L``; for ``L = 1`` this is ``sigma_u``."""
    if length == 1:
        return sigma(spec, u)
    return s_block(spec, u, length) / length


def endpoint_chain(spec):
    """``[(level, offset)]`` for the averaged increments that telescope ``sigma_{T-1} - sigma_0``.

    Left chain ``offset 0`` for levels ``1..t`` then right chain
    ``offset T - 2^l`` for levels ``1..t-1``.
    """
    _check_dyadic(spec.T)
    t, T = spec.t, spec.T
    return [(l, 0) for l in range(1, t + 1)] + [(l, T - 2 ** l) for l in range(1, t)]


def aligned_blocks(spec, level):
    """Offsets of the aligned dyadic blocks of length ``2^level``."""
    _check_dyadic(spec.T)
    L = 2 ** level
    return list(range(0, spec.T - L + 1, L))


def sigma_span(spec):
    """``sigma_{T-1} - sigma_0``."""
    return sigma(spec, spec.T - 1) - sigma(spec, 0)
