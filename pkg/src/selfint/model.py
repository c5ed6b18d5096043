"""Model parameters, discretized paths, time-decay kernel and energies.

Discrete energy of a path ``x`` sampled at spacing ``1/Nt`` (``Nt`` =
``n_per_unit``)::

    E(x) = (Nt/2) sum_j |x_j - x_{j-1}|^2
           + (alpha/Nt^2) sum_{i<j} g((j-i)/Nt) f(x_i - x_j)

with ``g(u) = 1/(1 + u**xi)``.  Pairs are unordered (no factor 2 relative to
the continuum double integral over ``[0,T]^2``, which counts each pair twice).
For pinned paths the pair sum runs over all grid points ``0..N``; ``x_0 = 0``.
For periodic paths the ``N`` distinct sites ``0..N-1`` interact through the
cyclic distance ``min(l, N-l)`` and the kinetic sum closes the loop.
The Gibbs weight is ``exp(-E)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import KernelSet

PINNED = "pinned"
PERIODIC = "periodic"


class SpecError(ValueError):
    """Invalid model or run parameters."""


class EnergyOverflowError(FloatingPointError):
    """A non-finite energy term was produced."""


@dataclass(frozen=True)
class ModelSpec:
    """One discretized self-interacting path measure.

    ``potential`` is ``None`` for the power law ``|z|**gamma``; otherwise a
    vectorized radial profile ``f(r)`` with ``f(0) = 0`` whose exponent
    ``gamma`` and quasi-convexity gap ``zeta`` are declared by the caller.
    """

    t: int
    alpha: float = 1.0
    gamma: float = 2.0
    xi: float = 2.0
    n_per_unit: int = 4
    dim: int = 1
    zeta: float = 1.0
    boundary: str = PINNED
    potential: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.t) != self.t or self.t < 1:
            raise SpecError(f"t must be an integer >= 1, got {self.t!r}")
        if int(self.n_per_unit) != self.n_per_unit or self.n_per_unit < 1:
            raise SpecError(f"n_per_unit must be a positive integer, got {self.n_per_unit!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise SpecError(f"dim must be a positive integer, got {self.dim!r}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise SpecError(f"alpha must be a finite nonnegative number, got {self.alpha!r}")
        if not (0 < self.gamma <= 2):
            raise SpecError(f"gamma must lie in (0, 2], got {self.gamma!r}")
        if not (self.xi >= 0 and math.isfinite(self.xi)):
            raise SpecError(f"xi must be a finite nonnegative number, got {self.xi!r}")
        if not self.zeta > 0:
            raise SpecError(f"zeta must be positive, got {self.zeta!r}")
        if self.potential is None and self.zeta != 1.0:
            raise SpecError("the power-law potential has zeta = 1")
        if self.boundary not in (PINNED, PERIODIC):
            raise SpecError(f"boundary must be 'pinned' or 'periodic', got {self.boundary!r}")
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "n_per_unit", int(self.n_per_unit))
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def T(self) -> int:
        return 2 ** self.t

    @property
    def N(self) -> int:
        return self.n_per_unit * self.T

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def n_sites(self) -> int:
        """Number of distinct sites carried by the energy."""
        return self.N if self.periodic else self.N + 1

    @property
    def is_gaussian(self) -> bool:
        return self.gamma == 2.0 and self.potential is None

    def radial(self, r):
        """Evaluate ``f`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        if self.potential is None:
            return np.abs(r) ** self.gamma
        return np.asarray(self.potential(r), dtype=float)

    def kernels(self, force_numpy=False) -> KernelSet:
        return KernelSet(self.gamma, self.potential, force_numpy=force_numpy)

    def replace(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class Path:
    """``N + 1`` grid points in ``R^d``; periodic paths repeat ``x_0`` at the end."""

    points: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        spec = self.spec
        if pts.shape != (spec.N + 1, spec.dim):
            raise SpecError(f"path must have shape {(spec.N + 1, spec.dim)}, got {pts.shape}")
        if spec.periodic:
            if not np.array_equal(pts[-1], pts[0]):
                raise SpecError("periodic path must end where it starts")
        elif np.any(pts[0] != 0.0):
            raise SpecError("pinned path must start at the origin")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_sites(cls, sites, spec: ModelSpec) -> "Path":
        sites = np.asarray(sites, dtype=float).reshape(spec.n_sites, spec.dim)
        if spec.periodic:
            sites = np.vstack([sites, sites[:1]])
        return cls(sites, spec)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Path":
        return cls(np.zeros((spec.N + 1, spec.dim)), spec)

    @property
    def sites(self) -> np.ndarray:
        return self.points[: self.spec.n_sites]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.spec.N + 1) / self.spec.n_per_unit


@dataclass(frozen=True)
class KernelTable:
    """``values[l] = 1/(1 + (l/Nt)**xi)`` for ``l = 0..N``."""

    values: np.ndarray
    spec: ModelSpec

    def pair_weights(self) -> np.ndarray:
        """Interaction weight indexed by grid-index separation of two sites."""
        if not self.spec.periodic:
            return self.values
        N = self.spec.N
        lag = np.arange(N)
        return self.values[np.minimum(lag, N - lag)]


class RegimeLabel(str, enum.Enum):
    VarianceCollapse = "VarianceCollapse"
    BoundedVariance = "BoundedVariance"
    LogOrSubdiffusive = "LogOrSubdiffusive"
    Subdiffusive = "Subdiffusive"
    Diffusive = "Diffusive"


def decay(u, xi):
    """Time-decay profile ``1/(1 + u**xi)`` for ``u > 0``."""
    return 1.0 / (1.0 + np.asarray(u, dtype=float) ** xi)


def build_kernel(spec: ModelSpec) -> KernelTable:
    vals = np.ones(spec.N + 1)
    vals[1:] = decay(np.arange(1, spec.N + 1) / spec.n_per_unit, spec.xi)
    vals.setflags(write=False)
    return KernelTable(vals, spec)


def _check_path(path: Path, spec: ModelSpec):
    if path.points.shape != (spec.N + 1, spec.dim):
        raise SpecError("path does not match spec")


def kinetic_energy(path: Path, spec: ModelSpec) -> float:
    with np.errstate(over="ignore"):
        return 0.5 * spec.n_per_unit * float(np.sum(np.diff(path.points, axis=0) ** 2))


def interaction_sum(path: Path, spec: ModelSpec, kernel: KernelTable) -> float:
    """``sum_{i<j} g f(x_i - x_j)`` without the ``alpha/Nt^2`` prefactor."""
    x = np.ascontiguousarray(path.sites)
    return spec.kernels().pair_sum(x, np.ascontiguousarray(kernel.pair_weights()))


def energy(path: Path, spec: ModelSpec, kernel: KernelTable) -> float:
    _check_path(path, spec)
    kin = kinetic_energy(path, spec)
    inter = spec.alpha / spec.n_per_unit ** 2 * interaction_sum(path, spec, kernel)
    if not (math.isfinite(kin) and math.isfinite(inter)):
        raise EnergyOverflowError(f"non-finite energy (kinetic={kin}, interaction={inter})")
    return kin + inter


def energy_delta(path: Path, site: int, proposal, spec: ModelSpec, kernel: KernelTable) -> float:
    """``E(path with points[site] := proposal) - E(path)`` in ``O(N)``.

    For periodic paths ``site`` may be ``0..N``; ``N`` aliases site 0.
    """
    _check_path(path, spec)
    N = spec.N
    if spec.periodic:
        if not 0 <= site <= N:
            raise IndexError(f"site {site} out of range 0..{N}")
        site = site % N
    elif not 1 <= site <= N:
        raise IndexError(f"site {site} out of range 1..{N} (site 0 is pinned)")
    p = np.asarray(proposal, dtype=float).reshape(spec.dim)
    x = np.ascontiguousarray(path.sites)
    dE = spec.kernels().site_delta(x, int(site), p, np.ascontiguousarray(kernel.pair_weights()),
                                   float(spec.n_per_unit), spec.alpha / spec.n_per_unit ** 2,
                                   spec.periodic)
    if not math.isfinite(dE):
        raise EnergyOverflowError(f"non-finite energy delta at site {site}")
    return dE


def with_point(path: Path, site: int, proposal) -> Path:
    pts = np.array(path.points)
    pts[site] = proposal
    if path.spec.periodic and site in (0, path.spec.N):
        pts[0] = pts[-1] = proposal
    return Path(pts, path.spec)


# Regime map on (gamma, xi): interval edges at gamma/2, 1+gamma/2, 2, 2+gamma/2.
# Edges belong to the interval on their right.
_REGIMES = (
    RegimeLabel.VarianceCollapse,
    RegimeLabel.BoundedVariance,
    RegimeLabel.LogOrSubdiffusive,
    RegimeLabel.Subdiffusive,
    RegimeLabel.Diffusive,
)


def regime_edges(gamma: float):
    return (gamma / 2, 1 + gamma / 2, 2.0, 2 + gamma / 2)


def regime_classify(gamma: float, xi: float) -> RegimeLabel:
    if not 0 < gamma < 2:
        raise SpecError(f"regime map is defined for gamma in (0, 2), got {gamma!r}")
    if xi < 0:
        raise SpecError(f"xi must be nonnegative, got {xi!r}")
    k = sum(xi >= e for e in regime_edges(gamma))
    return _REGIMES[k]
