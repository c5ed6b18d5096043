"""Exact solvers for the quadratic potential ``f(z) = |z|^2``.

With ``gamma = 2`` the Gibbs weight is ``exp(-x^T A x / 2)`` per coordinate,
``A`` being the Hessian of the discrete energy.  Pinned paths drop the fixed
point ``x_0`` and keep ``x_1..x_N`` as variables.  Periodic paths keep the
``N`` distinct sites; ``A`` is then circulant with a zero mode (constant
shifts), lifted by ``epsilon * I`` when a dense inverse is needed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.special

from . import functionals as fn
from .model import ModelSpec, Path, SpecError, build_kernel

MAX_DENSE = 8192


class SingularPrecisionError(np.linalg.LinAlgError):
    """Precision matrix is not positive definite."""


class NonConvergenceError(ArithmeticError):
    """Quadrature did not reach its tolerance; ``partial`` holds the last value."""

    def __init__(self, message, partial=None, abserr=None):
        super().__init__(message)
        self.partial = partial
        self.abserr = abserr


@dataclass(frozen=True)
class PrecisionMatrix:
    """Per-coordinate precision; the ``d`` coordinates are i.i.d. copies."""

    entries: np.ndarray
    spec: ModelSpec
    epsilon: float = 0.0

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def to_variables(self, weights) -> np.ndarray:
        """Map grid-point weights (length ``N + 1``) onto the matrix variables."""
        w = np.asarray(weights, dtype=float)
        if w.shape[-1] != self.spec.N + 1:
            raise ValueError(f"functional must have length {self.spec.N + 1}")
        if self.spec.periodic:
            out = w[..., :-1].copy()
            out[..., 0] += w[..., -1]
            return out
        return w[..., 1:]

    def full(self) -> np.ndarray:
        """Block-diagonal matrix over all ``d`` coordinates."""
        return np.kron(np.eye(self.spec.dim), self.entries)

    def quadratic_form(self, path: Path) -> float:
        """``x^T A x`` summed over coordinates."""
        X = path.sites.T if self.spec.periodic else path.points[1:].T
        return float(np.einsum("ci,ij,cj->", X, self.entries, X))


@dataclass(frozen=True)
class CirculantOperator:
    first_row: np.ndarray
    epsilon: float
    spec: ModelSpec

    @property
    def N(self) -> int:
        return self.first_row.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Fourier eigenvalues ``sum_j a_j cos(2 pi j k / N)``, ``k = 0..N-1``."""
        return np.fft.fft(self.first_row).real

    def dense(self) -> np.ndarray:
        return scipy.linalg.circulant(self.first_row)


@dataclass
class CovarianceSummary:
    labels: list
    matrix: np.ndarray
    dim: int = 1

    def index(self, label):
        return self.labels.index(label)

    def variance(self, label) -> float:
        i = self.index(label)
        return float(self.matrix[i, i])

    def covariance(self, a, b) -> float:
        return float(self.matrix[self.index(a), self.index(b)])

    def as_dict(self):
        return {str(l): float(self.matrix[i, i]) for i, l in enumerate(self.labels)}


def _require_quadratic(spec: ModelSpec):
    if not spec.is_gaussian:
        raise SpecError("exact Gaussian solvers need the quadratic potential (gamma = 2)")


def _interaction_laplacian(weights: np.ndarray, n: int) -> np.ndarray:
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    W = weights[lag]
    np.fill_diagonal(W, 0.0)
    L = -W
    L[np.diag_indices(n)] = W.sum(axis=1)
    return L


def brownian_precision(spec: ModelSpec) -> np.ndarray:
    """Kinetic part only, pinned at ``x_0``: ``Nt`` times the free-end path Laplacian."""
    N, nt = spec.N, spec.n_per_unit
    A = np.zeros((N, N))
    idx = np.arange(N)
    A[idx, idx] = 2.0 * nt
    A[N - 1, N - 1] = nt
    A[idx[:-1], idx[1:]] = -nt
    A[idx[1:], idx[:-1]] = -nt
    return A


def assemble_precision(spec: ModelSpec, epsilon: float = 0.0) -> PrecisionMatrix:
    """Dense Hessian of the discrete energy (per coordinate)."""
    _require_quadratic(spec)
    if spec.N > MAX_DENSE:
        raise SpecError(f"dense solves are capped at N <= {MAX_DENSE}, got N = {spec.N}")
    if spec.periodic:
        op = circulant_coefficients(spec, epsilon)
        return PrecisionMatrix(op.dense(), spec, epsilon)
    kern = build_kernel(spec)
    coef = 2.0 * spec.alpha / spec.n_per_unit ** 2
    full = coef * _interaction_laplacian(kern.pair_weights(), spec.N + 1)
    A = brownian_precision(spec) + full[1:, 1:]
    if epsilon:
        A = A + epsilon * np.eye(spec.N)
    return PrecisionMatrix(A, spec, epsilon)


def circulant_coefficients(spec: ModelSpec, epsilon: float = 0.0) -> CirculantOperator:
    """First row of the periodic Hessian plus ``epsilon`` on the diagonal.

    ``a_0 = 2 Nt + c sum_l w_l + eps``, ``a_l = -c w_l - Nt [l in {1, N-1}]`` with
    ``c = 2 alpha / Nt^2`` and ``w_l`` the decay at cyclic distance ``min(l, N-l)``.
    """
    _require_quadratic(spec)
    if not spec.periodic:
        raise SpecError("circulant form needs periodic boundary conditions")
    if epsilon < 0:
        raise SpecError("epsilon must be nonnegative")
    N, nt = spec.N, spec.n_per_unit
    w = build_kernel(spec).pair_weights().copy()
    c = 2.0 * spec.alpha / nt ** 2
    row = -c * w
    row[0] = 2.0 * nt + c * w[1:].sum() + epsilon
    row[1] -= nt
    row[N - 1] -= nt
    row.setflags(write=False)
    return CirculantOperator(row, float(epsilon), spec)


def fourier_eigenvalues(spec: ModelSpec, epsilon: float = 0.0) -> np.ndarray:
    """Closed-form eigenvalues, independent of the FFT path."""
    N, nt = spec.N, spec.n_per_unit
    w = build_kernel(spec).pair_weights()
    k = np.arange(N)[:, None]
    l = np.arange(1, N)[None, :]
    theta = 2 * np.pi * k[:, 0] / N
    inter = (w[1:] * (1 - np.cos(2 * np.pi * k * l / N))).sum(axis=1)
    return 2 * nt * (1 - np.cos(theta)) + epsilon + 2 * spec.alpha / nt ** 2 * inter


def _positive_modes(op: CirculantOperator) -> np.ndarray:
    lam = op.eigenvalues()
    if np.any(lam[1:] <= 0):
        raise SingularPrecisionError("circulant operator has a nonpositive nonzero mode")
    return lam


def dft_increment_variance(op: CirculantOperator, m: int, n: int) -> float:
    """Per-coordinate variance of ``x_m - x_n``; the ``k = 0`` mode never enters."""
    N = op.N
    if not (0 <= m < N and 0 <= n < N):
        raise IndexError(f"grid indices must lie in 0..{N - 1}")
    lam = _positive_modes(op)
    k = np.arange(1, N)
    num = 1.0 - np.cos(2 * np.pi * (n - m) * k / N)
    return float(2.0 / N * np.sum(num / lam[1:]))


def increment_variance_profile(op: CirculantOperator) -> np.ndarray:
    """Variance of ``x_{j+l} - x_j`` for every lag ``l = 0..N-1`` via one inverse FFT."""
    lam = _positive_modes(op)
    inv = np.zeros_like(lam)
    inv[1:] = 1.0 / lam[1:]
    g = np.fft.ifft(inv).real
    return 2.0 * (g[0] - g)


# ---------------------------------------------------------------------------
# continuum limit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    epsrel: float = 1e-8
    epsabs: float = 1e-13
    limit: int = 400
    inner_epsrel: float = 1e-10


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abserr: float


def _quad(f, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.integrate.IntegrationWarning)
        try:
            val, err = scipy.integrate.quad(f, a, b, **kw)[:2]
        except scipy.integrate.IntegrationWarning as exc:
            kw.pop("full_output", None)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, err = scipy.integrate.quad(f, a, b, **kw)[:2]
            raise NonConvergenceError(str(exc), partial=val, abserr=err) from None
    return val, err


def decay_integral(xi: float) -> float:
    """``int_0^inf dt / (1 + t^xi)`` for ``xi > 1``."""
    return (math.pi / xi) / math.sin(math.pi / xi)


def _tail_integral(A, xi):
    """``int_A^inf dt / (1 + t^xi)`` via the hypergeometric closed form."""
    z = -A ** (-xi)
    return A ** (1 - xi) / (xi - 1) * scipy.special.hyp2f1(1.0, (xi - 1) / xi, (2 * xi - 1) / xi, z)


def cosine_gap(q: float, xi: float, epsrel: float = 1e-10) -> float:
    """``rho_hat(0) - rho_hat(q) = 2 int_0^inf rho(t) (1 - cos(2 pi q t)) dt``.

    Small ``q``: the ``2 sin^2`` form on ``[0, A]`` avoids cancellation, and the
    tail is the closed-form ``int rho`` minus a QAWF cosine transform.  Large
    ``q``: closed-form ``int rho`` minus QAWO/QAWF cosine transforms.
    """
    if q == 0:
        return 0.0
    q = abs(q)
    omega = 2 * math.pi * q
    A = max(20.0, 40.0 / q)

    def rho(t):
        return 1.0 / (1.0 + t ** xi)

    # roundoff flags at the 1e-14 level are expected here and harmless
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
        if q < 0.5:
            def head(t):
                v = math.sin(0.5 * omega * t)
                return 2.0 * v * v * rho(t)

            h, _ = scipy.integrate.quad(head, 0.0, A, epsrel=epsrel, epsabs=0.0, limit=2000)
            rest = _tail_integral(A, xi)
            c, _ = scipy.integrate.quad(rho, A, np.inf, weight="cos", wvar=omega,
                                        epsabs=1e-12 * rest, limlst=200)
            return 2.0 * (h + rest - c)
        head, _ = scipy.integrate.quad(rho, 0.0, A, weight="cos", wvar=omega,
                                       epsrel=epsrel, epsabs=1e-14, limit=2000)
        tail, _ = scipy.integrate.quad(rho, A, np.inf, weight="cos", wvar=omega,
                                       epsabs=1e-14, limlst=200)
    return 2.0 * (decay_integral(xi) - head - tail)


def continuum_msd(alpha: float, xi: float, s: float,
                  config: Optional[QuadratureConfig] = None) -> QuadratureResult:
    """``2 int_0^inf dq (1 - cos(2 pi s q)) / (4 pi^2 q^2 + alpha (rho_hat(0) - rho_hat(q)))``.

    The integral uses the ordered-pair (continuum) coupling.  At ``alpha = 0``
    it equals ``|s|/2``, half the Brownian increment variance, so the discrete
    periodic solver matches ``periodic_limit_variance`` rather than this value.
    """
    cfg = config or QuadratureConfig()
    if alpha < 0:
        raise SpecError("alpha must be nonnegative")
    if s <= 0:
        raise SpecError("s must be positive")
    if xi <= 1:
        raise SpecError(f"the cosine transform of the decay is not integrable for xi = {xi} <= 1")
    if alpha == 0:
        return QuadratureResult(0.5 * s, 0.0)

    def denom(q):
        return 4 * math.pi ** 2 * q * q + alpha * cosine_gap(q, xi, cfg.inner_epsrel)

    def full(q):
        if q == 0.0:
            return 0.0
        v = math.sin(math.pi * s * q)
        return 2.0 * v * v / denom(q)

    q0 = 1.0 / s
    kw = dict(epsrel=cfg.epsrel, epsabs=cfg.epsabs, limit=cfg.limit)
    head, e1 = _quad(full, 0.0, q0, **kw)
    flat, e2 = _quad(lambda q: 1.0 / denom(q), q0, np.inf, **kw)
    osc, e3 = _quad(lambda q: 1.0 / denom(q), q0, np.inf, weight="cos",
                    wvar=2 * math.pi * s,
                    epsabs=max(cfg.epsabs, cfg.epsrel * (head + flat)), limlst=200)
    value = 2.0 * (head + flat - osc)
    return QuadratureResult(value, 2.0 * (e1 + e2 + e3))


CONTINUUM_TO_DISCRETE = 2.0


def periodic_limit_variance(alpha: float, xi: float, s: float,
                            config: Optional[QuadratureConfig] = None) -> QuadratureResult:
    """Large-``N``, large-``T`` limit of the discrete periodic increment variance.

    The discrete energy counts unordered pairs, so its coupling is twice the
    ordered-pair coupling of ``continuum_msd``; the overall constant is 2.
    """
    r = continuum_msd(2.0 * alpha, xi, s, config)
    return QuadratureResult(CONTINUUM_TO_DISCRETE * r.value, CONTINUUM_TO_DISCRETE * r.abserr)


# ---------------------------------------------------------------------------
# hierarchical (averaged-increment) penalties
# ---------------------------------------------------------------------------

ENDPOINT_CHAIN = "endpoint"
ALL_BLOCKS = "all"


def hier_blocks(spec: ModelSpec, blocks: str = ENDPOINT_CHAIN, level: Optional[int] = None):
    """``[(level, offset)]`` of the penalized averaged increments."""
    if spec.T & (spec.T - 1):
        raise SpecError("hierarchical measures need dyadic T")
    if blocks == ENDPOINT_CHAIN:
        return fn.endpoint_chain(spec)
    if blocks == ALL_BLOCKS:
        top = spec.t if level is None else int(level)
        if not 1 <= top <= spec.t:
            raise SpecError(f"level must lie in 1..{spec.t}")
        return [(l, u) for l in range(1, top + 1) for u in fn.aligned_blocks(spec, l)]
    raise SpecError(f"unknown block selector {blocks!r}")


def standard_a_seq(xi: float, t: int) -> np.ndarray:
    """``A_l = 2^{(xi-2) l / 2}`` indexed by level ``l = 0..t``."""
    l = np.arange(t + 1)
    return 2.0 ** ((xi - 2.0) * l / 2.0)


def a_seq_from_block_coefficients(coefficients) -> np.ndarray:
    """Convert penalties ``c_l |s^{2^l}|^2`` (``c`` indexed by level) to ``A_l``.

    ``c_l |s|^2 = |s_bar|^2 / (2 A_l^2)`` with ``s_bar = s / 2^l``.
    """
    c = np.asarray(coefficients, dtype=float)
    l = np.arange(c.shape[0])
    with np.errstate(divide="ignore"):
        return np.sqrt(1.0 / (2.0 * c * 4.0 ** l))


def hier_precision(spec: ModelSpec, a_seq: Sequence[float], blocks: str = ENDPOINT_CHAIN,
                   level: Optional[int] = None) -> PrecisionMatrix:
    """Pinned Brownian precision plus ``alpha A_l^{-2} v v^T`` per penalized block.

    ``a_seq[l]`` is ``A_l``; entries may be ``inf`` (no penalty).
    """
    if spec.periodic:
        raise SpecError("hierarchical measures are built on the pinned path")
    if spec.N > MAX_DENSE:
        raise SpecError(f"dense solves are capped at N <= {MAX_DENSE}")
    a = np.asarray(a_seq, dtype=float)
    chosen = hier_blocks(spec, blocks, level)
    if a.shape[0] <= max(l for l, _ in chosen):
        raise SpecError("a_seq is too short for the selected levels")
    if np.any(a[1:] <= 0):
        raise SpecError("a_seq entries must be positive")
    A = brownian_precision(spec)
    V = np.array([fn.s_bar(spec, u, 2 ** l)[1:] for l, u in chosen])
    wts = np.array([spec.alpha / a[l] ** 2 for l, _ in chosen])
    A = A + (V.T * wts) @ V
    return PrecisionMatrix(A, spec)


# ---------------------------------------------------------------------------
# covariances, sampling, Loewner order
# ---------------------------------------------------------------------------

def _cholesky(prec: PrecisionMatrix):
    try:
        return scipy.linalg.cho_factor(prec.entries, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularPrecisionError(str(exc)) from None


def covariance_matrix(prec: PrecisionMatrix) -> np.ndarray:
    """Per-coordinate covariance ``A^{-1}`` over the matrix variables."""
    cf = _cholesky(prec)
    return scipy.linalg.cho_solve(cf, np.eye(prec.size))


def covariance_of_functionals(prec: PrecisionMatrix, functionals, labels=None) -> CovarianceSummary:
    """``v_i^T A^{-1} v_j`` per coordinate for grid-weight vectors ``v``."""
    if isinstance(functionals, dict):
        labels = list(functionals)
        functionals = list(functionals.values())
    V = prec.to_variables(np.atleast_2d(np.asarray(functionals, dtype=float)))
    cf = _cholesky(prec)
    X = scipy.linalg.cho_solve(cf, V.T)
    C = V @ X
    C = 0.5 * (C + C.T)
    if labels is None:
        labels = list(range(V.shape[0]))
    return CovarianceSummary(list(labels), C, prec.spec.dim)


def sample_gaussian_array(prec: PrecisionMatrix, seed, count: int) -> np.ndarray:
    """``(count, N + 1, d)`` exact samples; ``x = L^{-T} z`` with ``A = L L^T``."""
    spec = prec.spec
    c, _ = _cholesky(prec)
    L = np.tril(c)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((prec.size, count * spec.dim))
    x = scipy.linalg.solve_triangular(L, z, lower=True, trans="T")
    x = x.T.reshape(count, spec.dim, prec.size).transpose(0, 2, 1)
    out = np.zeros((count, spec.N + 1, spec.dim))
    if spec.periodic:
        out[:, :-1] = x
        out[:, -1] = x[:, 0]
    else:
        out[:, 1:] = x
    return out


def sample_gaussian(prec: PrecisionMatrix, seed, count: int):
    return [Path(p, prec.spec) for p in sample_gaussian_array(prec, seed, count)]


def loewner_margin(covA, covB) -> float:
    """Smallest eigenvalue of ``covB - covA``."""
    covA = np.asarray(covA, dtype=float)
    covB = np.asarray(covB, dtype=float)
    if covA.shape != covB.shape or covA.ndim != 2 or covA.shape[0] != covA.shape[1]:
        raise ValueError(f"shape mismatch: {covA.shape} vs {covB.shape}")
    D = covB - covA
    return float(np.linalg.eigvalsh(0.5 * (D + D.T))[0])


def loewner_leq(covA, covB, tol: float = 1e-8) -> bool:
    """``covA <= covB`` in the Loewner order, up to ``tol``."""
    return loewner_margin(covA, covB) >= -tol
