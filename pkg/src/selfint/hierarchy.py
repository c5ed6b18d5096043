"""Dyadic path statistics, recursions and bound evaluators.

Time blocks are dyadic: at level ``l`` a block has length ``2^l`` (time
units) and aligned offsets ``u = 0, 2^l, 2*2^l, ...``.  ``sigma_i`` is the
trapezoid integral of the path over ``[i, i+1]`` and the averaged increment
``s_bar_u^{2^l}`` is (integral over the right half - integral over the left
half) / ``2^l``.

Logarithms: ``log`` is natural, ``log_T(y) = log(y)/log(T)``.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import functionals as fn
from .model import ModelSpec, Path, SpecError


# ---------------------------------------------------------------------------
# dyadic statistics
# ---------------------------------------------------------------------------

def _diameter(pts: np.ndarray) -> float:
    """Largest pairwise distance in a point cloud."""
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    if pts.shape[0] > 64:
        try:
            from scipy.spatial import ConvexHull

            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (flat) clouds: fall back to all pairs
            pass
    best = 0.0
    for k in range(0, pts.shape[0], 512):
        chunk = pts[k:k + 512]
        d2 = np.sum((chunk[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


@dataclass
class DyadicStatistics:
    """Dyadic summaries of one path.

    ``sigma`` has shape ``(T, d)``.  ``s_bar[(l, u)]`` and
    ``block_fluct[(j, u)]`` are keyed by level and offset (time units);
    ``s_bar`` covers levels ``1..t``, ``block_fluct`` levels ``0..t``.
    """

    spec: ModelSpec
    sigma: np.ndarray
    s_bar: Dict[Tuple[int, int], np.ndarray]
    block_fluct: Dict[Tuple[int, int], float]
    endpoint: np.ndarray = field(repr=False, default=None)

    @property
    def t(self) -> int:
        return self.spec.t

    def R(self, j: int) -> float:
        """``R_j``: largest within-block fluctuation over aligned level-``j`` blocks."""
        return max(v for (lev, _), v in self.block_fluct.items() if lev == j)

    def R_seq(self) -> np.ndarray:
        return np.array([self.R(j) for j in range(self.t + 1)])

    def event_B(self, i: int) -> bool:
        """``sup_{0 <= s < t <= 2^i} |x_t - x_s| <= sqrt(2^i * 20 * log(2^i))``."""
        if not 1 <= i <= self.t:
            raise ValueError(f"i must lie in 1..{self.t}")
        return self.block_fluct[(i, 0)] <= math.sqrt(2 ** i * 20 * i * math.log(2))

    def event_C(self, n: int, a_seq: Sequence[float]) -> bool:
        """Every aligned ``|s_bar^{2^l}|``, ``l = 1..n``, is at most ``a_seq[l]``."""
        if not 1 <= n <= self.t:
            raise ValueError(f"n must lie in 1..{self.t}")
        return all(np.linalg.norm(v) <= a_seq[l]
                   for (l, _), v in self.s_bar.items() if l <= n)


def dyadic_stats(path: Path) -> DyadicStatistics:
    spec = path.spec
    fn._check_dyadic(spec.T)
    x = path.points
    nt, T = spec.n_per_unit, spec.T
    # trapezoid over each unit interval
    cells = 0.5 * (x[:-1] + x[1:]) / nt
    sigma = cells.reshape(T, nt, spec.dim).sum(axis=1)
    # block sums level by level (pairwise, no long prefix sums to cancel)
    s_bar = {}
    halves = sigma
    for l in range(1, spec.t + 1):
        L = 2 ** l
        left, right = halves[0::2], halves[1::2]
        diff = (right - left) / L
        s_bar.update(((l, k * L), diff[k]) for k in range(diff.shape[0]))
        halves = left + right
    fluct = {}
    for j in range(spec.t + 1):
        L = 2 ** j
        if spec.dim == 1:
            # a block is its L*nt interior points plus the shared right endpoint
            m = L * nt
            body = x[:-1, 0].reshape(T // L, m)
            ends = x[m::m, 0]
            span = np.maximum(body.max(axis=1), ends) - np.minimum(body.min(axis=1), ends)
            fluct.update(((j, k * L), float(v)) for k, v in enumerate(span))
        else:
            for u in range(0, T, L):
                fluct[(j, u)] = _diameter(x[u * nt:(u + L) * nt + 1])
    return DyadicStatistics(spec, sigma, s_bar, fluct, x[-1].copy())


CORRECTED = "corrected"
PRINTED = "printed"


def telescoping_residual(path: Path, stats: Optional[DyadicStatistics] = None,
                         form: str = CORRECTED) -> float:
    """Residual of the dyadic decomposition of ``x_T``.

    Walking the right chain ``sigma_{T-1} -> s_bar_{T-2^l}^{2^l}`` up to the
    full block and back down the left chain ``s_bar_0^{2^j}`` produces::

        x_T = (x_T - sigma_{T-1}) + sum_{j=1..t} s_bar_0^{2^j}
              + sum_{l=1..t} s_bar_{T-2^l}^{2^l} + sigma_0

    where the ``l = t`` term is ``s_bar_0^T`` again (it enters twice).
    ``form="printed"`` drops that second copy (right chain stops at
    ``l = t-1``); its residual is then exactly ``|s_bar_0^T|``.
    """
    if form not in (CORRECTED, PRINTED):
        raise ValueError(f"unknown form {form!r}")
    stats = stats or dyadic_stats(path)
    t, T = stats.t, stats.spec.T
    xT = path.points[-1]
    total = (xT - stats.sigma[T - 1]) + stats.sigma[0]
    for j in range(1, t + 1):
        total = total + stats.s_bar[(j, 0)]
    top = t + 1 if form == CORRECTED else t
    for l in range(1, top):
        total = total + stats.s_bar[(l, T - 2 ** l)]
    return float(np.linalg.norm(xT - total))


# ---------------------------------------------------------------------------
# quadratic-form domination
# ---------------------------------------------------------------------------

def _interval_weights(spec: ModelSpec, interval) -> np.ndarray:
    a, b = interval
    if int(a) != a or int(b) != b or not 0 <= a < b <= spec.T:
        raise SpecError(f"interval {interval} must be integer-aligned inside [0, {spec.T}]")
    return fn.integral_weights(spec.N + 1, spec.n_per_unit, int(a), int(b))


def _quadform_parts(path: Path, I1, I2):
    spec = path.spec
    L1, L2 = I1[1] - I1[0], I2[1] - I2[0]
    if L1 != L2:
        raise SpecError(f"intervals must have equal length, got {L1} and {L2}")
    if max(I1[0], I2[0]) < min(I1[1], I2[1]):
        raise SpecError("intervals must be disjoint")
    w1, w2 = _interval_weights(spec, I1), _interval_weights(spec, I2)
    x = path.points
    X1, X2 = w1 @ x, w2 @ x
    S1 = float(w1 @ np.sum(x * x, axis=1))
    S2 = float(w2 @ np.sum(x * x, axis=1))
    return float(L1), X1, X2, S1, S2


def quadform_Q(path: Path, I1, I2) -> float:
    """``int_{I1} int_{I2} |x_t - x_s|^2 ds dt`` with trapezoid weights in each variable."""
    L, X1, X2, S1, S2 = _quadform_parts(path, I1, I2)
    return L * S1 + L * S2 - 2.0 * float(X1 @ X2)


def quadform_Qtilde(path: Path, I1, I2) -> float:
    """``|int_{I1} x - int_{I2} x|^2``."""
    _, X1, X2, _, _ = _quadform_parts(path, I1, I2)
    return float(np.sum((X1 - X2) ** 2))


def quadform_gap(path: Path, I1, I2) -> float:
    """``Q - Qtilde = L (int_{I1} |x - xbar_1|^2 + int_{I2} |x - xbar_2|^2)``."""
    L, X1, X2, S1, S2 = _quadform_parts(path, I1, I2)
    return (L * S1 - float(X1 @ X1)) + (L * S2 - float(X2 @ X2))


def block_variance_form(path: Path, interval) -> float:
    """``int_I |x - xbar_I|^2`` (trapezoid), the correction term of the gap."""
    w = _interval_weights(path.spec, interval)
    L = interval[1] - interval[0]
    x = path.points
    xbar = (w @ x) / L
    return float(w @ np.sum((x - xbar) ** 2, axis=1))


# ---------------------------------------------------------------------------
# variance decomposition bound
# ---------------------------------------------------------------------------

STATED = "stated"
PROOF = "proof"


def variance_bound_lemma(alpha: float, a_seq: Sequence[float], t: int, form: str = STATED) -> float:
    """Upper bound on ``E|sigma_{T-1} - sigma_0|^2`` from per-level deviations.

    ``a_seq`` holds ``A_1..A_t`` (length ``t``).  ``form="stated"`` gives
    ``2 sum A_i^2 / alpha + 4 A* t^2 / alpha``; ``form="proof"`` gives the
    intermediate ``(sum_{i<t} A_i^2 + sum_{i<=t} A_i^2) / alpha + 2 (t + t^2) A* / alpha``.
    ``A* = max A_i^2``.
    """
    a = np.asarray(a_seq, dtype=float)
    if a.shape != (t,):
        raise ValueError(f"a_seq must hold A_1..A_t (length {t}), got shape {a.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sq = a ** 2
    a_star = float(sq.max())
    if form == STATED:
        return (2.0 * sq.sum() + 4.0 * a_star * t * t) / alpha
    if form == PROOF:
        return (sq[:-1].sum() + sq.sum() + 2.0 * (t + t * t) * a_star) / alpha
    raise ValueError(f"unknown form {form!r}")


@dataclass
class LemmaReport:
    exact: float
    bound_stated: float
    bound_proof: float
    sbar_variances: Dict[Tuple[int, int], float]

    @property
    def holds(self) -> bool:
        return self.exact <= self.bound_stated and self.exact <= self.bound_proof


def check_lemma_bound(spec: ModelSpec, a_seq: Optional[Sequence[float]] = None) -> LemmaReport:
    """Exact ``E|sigma_{T-1} - sigma_0|^2`` (per coordinate) under the endpoint-chain
    hierarchical Gaussian, next to both bound forms.

    ``a_seq`` is level-indexed (``a_seq[l] = A_l``, entry 0 unused); the
    default is ``A_l^2 = 2^{(xi-2) l}``.
    """
    from . import gaussian

    if a_seq is None:
        a_seq = gaussian.standard_a_seq(spec.xi, spec.t)
    a = np.asarray(a_seq, dtype=float)
    prec = gaussian.hier_precision(spec, a, gaussian.ENDPOINT_CHAIN)
    chain = fn.endpoint_chain(spec)
    funcs = {"span": fn.sigma_span(spec)}
    for l, u in chain:
        funcs[(l, u)] = fn.s_bar(spec, u, 2 ** l)
    cov = gaussian.covariance_of_functionals(prec, funcs)
    t = spec.t
    return LemmaReport(
        exact=cov.variance("span"),
        bound_stated=variance_bound_lemma(spec.alpha, a[1:t + 1], t, STATED),
        bound_proof=variance_bound_lemma(spec.alpha, a[1:t + 1], t, PROOF),
        sbar_variances={k: cov.variance(k) for k in chain},
    )


# ---------------------------------------------------------------------------
# theorem bounds
# ---------------------------------------------------------------------------

THEOREMS = ("T1_1", "T1_2", "T1_3", "T1_4")


def theorem_bound(which: str, alpha: float, T: float, gamma: float, xi: float,
                  constant_c: float = 1.0, zeta: float = 1.0) -> float:
    """Right-hand side of the selected mean-square-displacement bound.

    T1_1 (gamma = 2, 0 <= xi < 3):
        ``16 (C min(alpha^{-1/2}, 1) + alpha^{-1} max(log(T)^2 T^{xi-2} / zeta, 1))``
    T1_2 (0 < gamma < 2, 1 + gamma/2 < xi < 2 + gamma/2):  ``C log(T)^4 T^{xi-1-gamma/2}``
    T1_3 (0 < gamma < 2, xi > 2):  ``C T^{2 (xi-2)/gamma} log(T)^2``
    T1_4 (0 < gamma < 2, 0 < xi < 2):  ``C log(T)^{5/2}``
    """
    if which not in THEOREMS:
        raise SpecError(f"unknown bound {which!r}; choose from {THEOREMS}")
    if T <= 1:
        raise SpecError("T must exceed 1")
    if alpha <= 0:
        raise SpecError("alpha must be positive")
    lt = math.log(T)
    C = constant_c
    if which == "T1_1":
        if gamma != 2:
            raise SpecError("T1_1 bound requires gamma = 2")
        if not 0 <= xi < 3:
            raise SpecError("T1_1 bound requires 0 <= xi < 3")
        return 16.0 * (C * min(alpha ** -0.5, 1.0)
                       + max(lt ** 2 * T ** (xi - 2) / zeta, 1.0) / alpha)
    if not 0 < gamma < 2:
        raise SpecError(f"{which} bound requires 0 < gamma < 2")
    if which == "T1_2":
        if not 1 + gamma / 2 < xi < 2 + gamma / 2:
            raise SpecError("T1_2 bound requires 1 + gamma/2 < xi < 2 + gamma/2")
        return C * lt ** 4 * T ** (xi - 1 - gamma / 2)
    if which == "T1_3":
        if not xi > 2:
            raise SpecError("T1_3 bound requires xi > 2")
        return C * T ** (2 * (xi - 2) / gamma) * lt ** 2
    if not 0 < xi < 2:
        raise SpecError("T1_4 bound requires 0 < xi < 2")
    return C * lt ** 2.5


# ---------------------------------------------------------------------------
# recursions
# ---------------------------------------------------------------------------

R0 = math.sqrt(20.0)
R_STEP = 256.0


@dataclass
class RecursionState:
    """Sequences of the level recursions plus the derived constants."""

    a_seq: Optional[np.ndarray] = None
    r_seq: Optional[np.ndarray] = None
    s_seq: Optional[np.ndarray] = None
    v_seq: Optional[np.ndarray] = None
    exponent_trace: Optional[np.ndarray] = None
    c_of_t: Optional[float] = None
    d_of_t: Optional[float] = None
    a_star: Optional[float] = None
    beta_const: Optional[float] = None
    overflow: bool = False
    overflow_step: Optional[int] = None
    fixed_point: Optional[float] = None
    predicted_limit: Optional[float] = None


def a_r_recursion(gamma: float, xi: float, n_max: int, t: Optional[int] = None,
                  r_limit: float = 1e300) -> RecursionState:
    """``A_n = r_n^{1-gamma/2} 2^{n(xi-2)/2}``, ``r_{n+1} = 256 sum_{k<=n} A_k``, ``r_0 = sqrt(20)``.

    Stops early with ``overflow=True`` once ``r`` would exceed ``r_limit``.
    ``beta_const = (256 sqrt(20) t)^{2-gamma}`` is filled when ``t`` is given.
    """
    if not 0 < gamma <= 2:
        raise SpecError("gamma must lie in (0, 2]")
    if n_max < 0:
        raise SpecError("n_max must be nonnegative")
    e = 1.0 - gamma / 2.0
    a = np.empty(n_max + 1)
    r = np.empty(n_max + 2)
    r[0] = R0
    partial = 0.0
    last = n_max
    overflow = False
    for n in range(n_max + 1):
        a[n] = r[n] ** e * 2.0 ** (n * (xi - 2.0) / 2.0)
        partial += a[n]
        nxt = R_STEP * partial
        if not math.isfinite(nxt) or nxt > r_limit:
            overflow, last = True, n
            break
        r[n + 1] = nxt
    a = a[:last + 1]
    r = r[:last + 1] if overflow else r[:last + 2]
    return RecursionState(
        a_seq=a, r_seq=r, a_star=float(np.max(a ** 2)),
        beta_const=None if t is None else (R_STEP * R0 * t) ** (2 - gamma),
        overflow=overflow, overflow_step=last if overflow else None,
    )


def bounded_recursion_cap(gamma: float, xi: float, tight: bool = True) -> float:
    """Uniform cap on ``r_n`` for ``xi < 2``.

    With ``eps = gamma/2``, ``C = 256``, ``c = (2 - xi)/2`` the increments of
    ``r_n^eps`` are at most ``eps C 2^{-c n}``, giving
    ``(r_0^eps + eps C / (1 - 2^{-c}))^{1/eps}``.  ``tight=False`` replaces
    ``r_0^eps = 20^{gamma/4}`` by the larger ``20^{gamma/2}``.
    """
    if not xi < 2:
        raise SpecError("the recursion is bounded only for xi < 2")
    if not 0 < gamma < 2:
        raise SpecError("gamma must lie in (0, 2)")
    eps = gamma / 2.0
    c = (2.0 - xi) / 2.0
    start = R0 ** eps if tight else 20.0 ** (gamma / 2.0)
    return (start + eps * R_STEP / (1.0 - 2.0 ** (-c))) ** (1.0 / eps)


def c_of_T(T: float) -> float:
    """``C(T) = sqrt(40 log T)``."""
    return math.sqrt(40.0 * math.log(T))


def d_of_T(T: float) -> float:
    """``D(T) = log_T(log T + log(T)^2)``."""
    lt = math.log(T)
    return math.log(lt + lt * lt) / lt


def s_v_recursion(gamma: float, xi: float, T: float, j_max: int) -> RecursionState:
    """``S_0 = T``, ``V_j = S_j^{1/2} C(T)``, ``S_{j+1} = V_j^{2-gamma} T^{xi-2+D(T)}``.

    Iterated in log_T coordinates (``b_j = log_T S_j``) to avoid overflow::

        b_{j+1} = xi - 2 + D + (2 - gamma)(b_j / 2 + log_T C)

    whose fixed point is ``(2/gamma)(xi - 2 + D + (2 - gamma) log_T C)``.
    ``predicted_limit`` holds ``(2/gamma)(xi - 2 + log_T C) + D`` for comparison.
    """
    if not 0 < gamma < 2:
        raise SpecError("gamma must lie in (0, 2)")
    if T <= math.e:
        raise SpecError("T must exceed e so that C(T) and D(T) are defined and positive")
    lt = math.log(T)
    C, D = c_of_T(T), d_of_T(T)
    lc = math.log(C) / lt
    b = np.empty(j_max + 1)
    b[0] = 1.0
    for j in range(j_max):
        b[j + 1] = xi - 2.0 + D + (2.0 - gamma) * (0.5 * b[j] + lc)
    with np.errstate(over="ignore"):
        s = np.exp(b * lt)
        v = np.exp(0.5 * b * lt) * C
    return RecursionState(
        s_seq=s, v_seq=v, exponent_trace=b, c_of_t=C, d_of_t=D,
        fixed_point=(2.0 / gamma) * (xi - 2.0 + D + (2.0 - gamma) * lc),
        predicted_limit=(2.0 / gamma) * (xi - 2.0 + lc) + D,
    )


def s_v_direct(gamma: float, xi: float, T: float, j_max: int) -> np.ndarray:
    """``S_j`` by direct iteration in floating point (for moderate ``T`` only)."""
    C, D = c_of_T(T), d_of_T(T)
    s = [float(T)]
    for _ in range(j_max):
        v = math.sqrt(s[-1]) * C
        s.append(v ** (2.0 - gamma) * T ** (xi - 2.0 + D))
    return np.array(s)


@dataclass(frozen=True)
class FixedPointResult:
    value: float
    fixed_point: float
    error: float
    error_bound: float
    bound_holds: bool


def fixed_point_iterate(C: float, d: float, n: int) -> FixedPointResult:
    """``h^n(1)`` for ``h(x) = C + d x`` against the bound ``C/(1-d) |d|^n``.

    Iterates in exact rational arithmetic so the comparison is not masked by
    rounding.  The exact error is ``|d|^n |1 - x*|``, so the bound holds
    exactly when ``|1 - x*| <= x*``, i.e. ``x* >= 1/2``; ``bound_holds``
    reports it.
    """
    if not -1 < d < 1:
        raise SpecError(f"d must lie in (-1, 1), got {d!r}")
    if C < 0:
        raise SpecError("C must be nonnegative")
    if n < 0:
        raise SpecError("n must be nonnegative")
    Cq, dq = Fraction(C), Fraction(d)
    x = Fraction(1)
    for _ in range(n):
        x = Cq + dq * x
    star = Cq / (1 - dq)
    err = abs(star - x)
    bound = star * abs(dq) ** n
    return FixedPointResult(float(x), float(star), float(err), float(bound), err <= bound)


def exponent_map(beta: float, gamma: float, xi: float) -> float:
    """``beta -> xi - 2 + beta - beta gamma / 2``."""
    return xi - 2.0 + beta - beta * gamma / 2.0


def exponent_fixed_point(gamma: float, xi: float) -> float:
    """``2 (xi - 2) / gamma``."""
    if gamma == 0:
        raise SpecError("the exponent map has no fixed point at gamma = 0")
    return 2.0 * (xi - 2.0) / gamma
