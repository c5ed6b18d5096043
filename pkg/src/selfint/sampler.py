"""Metropolis sampling of the discretized self-interacting path measures.

Moves: systematic single-site Gaussian proposals, plus (every
``block_move_period`` sweeps) a pass of tail shifts ``x_j -> x_j + delta`` for
all ``j >= k``, ``k = 1..M-1``.  A tail shift changes a single increment
(pinned) or an increment and the closing bond (periodic), which is what mixes
long-wavelength modes.

Site 0 is never moved.  For pinned paths it is the pin; for periodic paths
the energy is translation invariant, so holding ``x_0 = 0`` is an exact gauge
fixing for every increment observable.

Proposal scales are tuned towards 0.44 acceptance during burn-in only and
frozen afterwards, so the retained chain is a time-homogeneous Metropolis
chain with symmetric proposals.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import functionals as fn
from .model import (EnergyOverflowError, KernelTable, ModelSpec, Path, SpecError,
                    build_kernel, energy)

TARGET_ACCEPTANCE = 0.44
TUNE_INTERVAL = 50


class InsufficientBatchesError(RuntimeError):
    """Too few post-burn-in samples for a batch-means error."""


class SeriesTooShortError(ValueError):
    """Autocorrelation analysis needs at least 100 samples."""


@dataclass(frozen=True)
class McmcConfig:
    sweeps: int = 20000
    burn_in: int = 2000
    proposal_scale: float = 0.5
    block_move_period: int = 1
    chains: int = 1
    seed: int = 0
    tempering_ladder: Optional[tuple] = None
    tail_scale: Optional[float] = None
    tune: bool = True
    thin: int = 1
    batches: int = 32
    resync_period: int = 1000
    record_block_fluct: bool = False
    energy_sign: float = 1.0

    def __post_init__(self):
        if not (self.sweeps > self.burn_in >= 0):
            raise SpecError("need sweeps > burn_in >= 0")
        if not self.proposal_scale > 0:
            raise SpecError("proposal_scale must be positive")
        if self.tail_scale is not None and not self.tail_scale > 0:
            raise SpecError("tail_scale must be positive")
        if self.block_move_period < 0:
            raise SpecError("block_move_period must be >= 0 (0 disables tail shifts)")
        if self.chains < 1 or self.thin < 1 or self.batches < 1 or self.resync_period < 1:
            raise SpecError("chains, thin, batches and resync_period must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        if self.tempering_ladder is not None:
            lad = tuple(float(v) for v in self.tempering_ladder)
            if not lad or lad[0] != 1.0 or any(v < 0 for v in lad):
                raise SpecError("tempering_ladder must start at 1.0 and be nonnegative")
            object.__setattr__(self, "tempering_ladder", lad)
        if self.energy_sign not in (1.0, -1.0):
            raise SpecError("energy_sign must be +1 or -1")

    def replace(self, **changes) -> "McmcConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class SweepStats:
    accepted: int
    proposed: int
    energy_change: float

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class McmcDiagnostics:
    acceptance_rate: Dict[str, float]
    iat: Dict[str, float]
    effective_samples: Dict[str, float]
    batch_count: int
    retained_samples: int
    proposal_scale: float
    tail_scale: float
    energy_drift: float
    degenerate: Dict[str, bool] = field(default_factory=dict)
    backend: str = ""


@dataclass
class ChainResult:
    """Recorded functional values per retained sweep.

    ``series[name]`` has shape ``(n_samples, d)``; ``block_fluct`` (if
    recorded) has shape ``(n_samples, t + 1)``.
    """

    series: Dict[str, np.ndarray]
    diagnostics: McmcDiagnostics
    final: np.ndarray
    block_fluct: Optional[np.ndarray] = None

    def squared(self, name: str) -> np.ndarray:
        return np.sum(self.series[name] ** 2, axis=1)


@dataclass(frozen=True)
class EstimateWithError:
    mean: float
    std_error: float
    n_effective: float
    iat: float = 0.5
    n_samples: int = 0
    batch_count: int = 0
    batch_se: float = 0.0
    iat_se: float = 0.0

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.std_error


# ---------------------------------------------------------------------------
# autocorrelation and batch means
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IatResult:
    tau: float
    window: int
    degenerate: bool


def autocorrelation(series) -> np.ndarray:
    """Normalized autocorrelation function via FFT."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.shape[0]
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=size)
    acf = np.fft.irfft(f * np.conj(f), n=size)[:n]
    return acf / acf[0]


def iat_analysis(series, c: float = 5.0) -> IatResult:
    """Windowed integrated autocorrelation time ``1/2 + sum_{t=1}^{W} rho(t)``.

    ``W`` is the smallest window with ``W >= c tau(W)``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.shape[0] < 100:
        raise SeriesTooShortError("integrated autocorrelation needs a 1-d series of length >= 100")
    if np.ptp(x) == 0 or not np.isfinite(x).all():
        return IatResult(0.5, 0, True)
    rho = autocorrelation(x)
    taus = 0.5 + np.cumsum(rho[1:])
    windows = np.arange(1, rho.shape[0])
    ok = windows >= c * taus
    W = int(np.argmax(ok)) if ok.any() else len(taus) - 1
    return IatResult(max(0.5, float(taus[W])), int(windows[W]), False)


def integrated_autocorrelation(series) -> float:
    return iat_analysis(series).tau


def batch_means(series, batches: int = 32, min_batches: int = 16):
    """``(mean, se, batch_count)``; trailing samples that do not fill a batch are dropped."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    b = min(batches, n)
    if b < min_batches:
        raise InsufficientBatchesError(f"only {n} samples; need at least {min_batches} batches")
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(b)), b


def estimate_from_series(chains: Sequence[np.ndarray], batches: int = 32) -> EstimateWithError:
    """Pool per-chain scalar series: batch means per chain, IAT-based cross-check.

    The reported error is the larger of the batch-means and the IAT-inflated
    naive error.
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    n = sum(c.shape[0] for c in chains)
    bmeans = []
    taus = []
    for c in chains:
        b = min(batches, c.shape[0])
        if b < 16:
            raise InsufficientBatchesError(f"chain with {c.shape[0]} samples yields fewer than 16 batches")
        size = c.shape[0] // b
        bmeans.append(c[: b * size].reshape(b, size).mean(axis=1))
        taus.append(iat_analysis(c).tau if c.shape[0] >= 100 else 0.5)
    allb = np.concatenate(bmeans)
    mean = float(np.mean(np.concatenate(chains)))
    bse = float(allb.std(ddof=1) / math.sqrt(allb.shape[0]))
    tau = float(np.mean(taus))
    var = float(np.var(np.concatenate(chains), ddof=1))
    ise = math.sqrt(2.0 * tau * var / n)
    return EstimateWithError(mean, max(bse, ise), n / (2.0 * tau), tau, n, int(allb.shape[0]), bse, ise)


# ---------------------------------------------------------------------------
# single sweeps
# ---------------------------------------------------------------------------

def _coef(spec: ModelSpec, alpha: Optional[float] = None) -> float:
    a = spec.alpha if alpha is None else alpha
    return a / spec.n_per_unit ** 2


def metropolis_sweep(path: Path, spec: ModelSpec, kernel: KernelTable, config: McmcConfig,
                     rng: np.random.Generator, scale: Optional[float] = None):
    """One systematic single-site pass; returns ``(new_path, SweepStats)``.

    Each movable site ``i`` draws ``p = x_i + scale * z`` with ``z`` standard
    normal and accepts with probability ``min(1, exp(-dE))``.
    """
    scale = config.proposal_scale if scale is None else scale
    x = np.array(path.sites)
    M, d = x.shape
    steps = scale * rng.standard_normal((M - 1, d))
    logu = np.log(rng.random(M - 1))
    ks = spec.kernels()
    w = np.ascontiguousarray(kernel.pair_weights())
    acc, dE, bad = ks.site_sweep(x, 1, steps, logu, w, float(spec.n_per_unit), _coef(spec),
                                 spec.periodic, config.energy_sign)
    if bad >= 0:
        raise EnergyOverflowError(f"non-finite energy delta at site {bad}")
    return Path.from_sites(x, spec), SweepStats(int(acc), M - 1, float(dE))


def tail_shift_sweep(path: Path, spec: ModelSpec, kernel: KernelTable, config: McmcConfig,
                     rng: np.random.Generator, scale: float):
    x = np.array(path.sites)
    M, d = x.shape
    shifts = scale * rng.standard_normal((M - 1, d))
    logu = np.log(rng.random(M - 1))
    ks = spec.kernels()
    w = np.ascontiguousarray(kernel.pair_weights())
    acc, dE, bad = ks.tail_sweep(x, shifts, logu, w, float(spec.n_per_unit), _coef(spec),
                                 spec.periodic, config.energy_sign)
    if bad >= 0:
        raise EnergyOverflowError(f"non-finite energy delta for tail shift at {bad}")
    return Path.from_sites(x, spec), SweepStats(int(acc), M - 1, float(dE))


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def msd_functional(spec: ModelSpec) -> np.ndarray:
    """``x_T`` (pinned) or ``x_T - x_{T/2}`` (periodic) as grid weights."""
    if spec.periodic:
        return fn.increment(spec, spec.N, spec.N // 2)
    return fn.endpoint(spec)


def default_observables(spec: ModelSpec) -> Dict[str, np.ndarray]:
    """``msd`` functional plus the endpoint-chain averaged increments."""
    obs = {"msd": msd_functional(spec)}
    if spec.T >= 2:
        for l, u in fn.endpoint_chain(spec):
            obs[f"sbar_{l}_{u}"] = fn.s_bar(spec, u, 2 ** l)
    return obs


def _site_weights(spec: ModelSpec, weights: np.ndarray) -> np.ndarray:
    """Fold grid weights onto stored sites (periodic: point N is site 0)."""
    if spec.periodic:
        out = weights[..., :-1].copy()
        out[..., 0] += weights[..., -1]
        return out
    return weights


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

class _Replica:
    def __init__(self, spec, kernel, alpha, x, config):
        self.spec = spec
        self.coef = _coef(spec, alpha)
        self.alpha = alpha
        self.x = x
        self.ks = spec.kernels()
        self.w = np.ascontiguousarray(kernel.pair_weights())
        self.nt = float(spec.n_per_unit)
        self.scale = config.proposal_scale
        self.tail_scale = config.tail_scale or config.proposal_scale
        self.energy = self.full_energy()
        self.drift = 0.0

    def full_energy(self):
        kin = 0.5 * self.nt * self.ks.kinetic(self.x, self.spec.periodic)
        return kin + self.coef * self.ks.pair_sum(self.x, self.w)

    def interaction(self):
        return self.ks.pair_sum(self.x, self.w) / self.spec.n_per_unit ** 2

    def resync(self):
        exact = self.full_energy()
        if not math.isfinite(exact):
            raise EnergyOverflowError("non-finite energy on resync")
        rel = abs(self.energy - exact) / max(abs(exact), 1e-300)
        self.drift = max(self.drift, rel)
        self.energy = exact


def _run_single(spec: ModelSpec, config: McmcConfig, kernel: KernelTable,
                weights: np.ndarray, names, seed_seq: np.random.SeedSequence):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    M, d = spec.n_sites, spec.dim
    ladder = config.tempering_ladder or (1.0,)
    reps = [_Replica(spec, kernel, spec.alpha * f, np.zeros((M, d)), config) for f in ladder]
    sign = config.energy_sign
    site_acc = np.zeros(2)
    tail_acc = np.zeros(2)
    swap_acc = np.zeros(2)
    win = np.zeros((len(reps), 4))  # tuning window: site acc/prop, tail acc/prop
    n_keep = (config.sweeps - config.burn_in + config.thin - 1) // config.thin
    out = np.empty((n_keep, weights.shape[0], d))
    fluct = np.empty((n_keep, spec.t + 1)) if config.record_block_fluct else None
    keep = 0
    period = config.block_move_period
    for sweep in range(config.sweeps):
        burning = sweep < config.burn_in
        for r, rep in enumerate(reps):
            steps = rep.scale * rng.standard_normal((M - 1, d))
            logu = np.log(rng.random(M - 1))
            acc, dE, bad = rep.ks.site_sweep(rep.x, 1, steps, logu, rep.w, rep.nt, rep.coef,
                                             spec.periodic, sign)
            if bad >= 0:
                raise EnergyOverflowError(f"non-finite energy delta at site {bad} (sweep {sweep})")
            rep.energy += dE
            win[r, 0] += acc
            win[r, 1] += M - 1
            if r == 0 and not burning:
                site_acc += (acc, M - 1)
            if period and sweep % period == 0 and M > 1:
                shifts = rep.tail_scale * rng.standard_normal((M - 1, d))
                logu = np.log(rng.random(M - 1))
                acc, dE, bad = rep.ks.tail_sweep(rep.x, shifts, logu, rep.w, rep.nt, rep.coef,
                                                 spec.periodic, sign)
                if bad >= 0:
                    raise EnergyOverflowError(f"non-finite tail-shift delta at {bad} (sweep {sweep})")
                rep.energy += dE
                win[r, 2] += acc
                win[r, 3] += M - 1
                if r == 0 and not burning:
                    tail_acc += (acc, M - 1)
        if len(reps) > 1:
            start = sweep % 2
            inter = [rep.interaction() for rep in reps]
            for r in range(start, len(reps) - 1, 2):
                a, b = reps[r], reps[r + 1]
                dlog = sign * (a.alpha - b.alpha) * (inter[r] - inter[r + 1])
                u = rng.random()
                if not burning:
                    swap_acc[1] += 1
                if dlog >= 0 or math.log(u) < dlog:
                    a.x, b.x = b.x, a.x
                    inter[r], inter[r + 1] = inter[r + 1], inter[r]
                    a.energy, b.energy = a.full_energy(), b.full_energy()
                    if not burning:
                        swap_acc[0] += 1
        if burning and config.tune and (sweep + 1) % TUNE_INTERVAL == 0:
            for r, rep in enumerate(reps):
                if win[r, 1]:
                    rep.scale = _tuned(rep.scale, win[r, 0] / win[r, 1])
                if win[r, 3]:
                    rep.tail_scale = _tuned(rep.tail_scale, win[r, 2] / win[r, 3])
            win[:] = 0
        if (sweep + 1) % config.resync_period == 0:
            for rep in reps:
                rep.resync()
        if not burning and (sweep - config.burn_in) % config.thin == 0:
            x0 = reps[0].x
            out[keep] = weights @ x0
            if fluct is not None:
                fluct[keep] = _block_fluct(spec, x0)
            keep += 1
    for rep in reps:
        rep.resync()
    series = {name: out[:, k, :] for k, name in enumerate(names)}
    acc_rates = {
        "site": site_acc[0] / site_acc[1] if site_acc[1] else 0.0,
        "tail": tail_acc[0] / tail_acc[1] if tail_acc[1] else 0.0,
    }
    if len(reps) > 1:
        acc_rates["swap"] = swap_acc[0] / swap_acc[1] if swap_acc[1] else 0.0
    return series, acc_rates, reps[0], fluct


def _tuned(scale, rate):
    # multiplicative Robbins-Monro style nudge, clamped to avoid runaway scales
    return float(np.clip(scale * math.exp(rate - TARGET_ACCEPTANCE), 1e-8, 1e8))


def _block_fluct(spec: ModelSpec, sites: np.ndarray) -> np.ndarray:
    from .hierarchy import _diameter

    x = sites if not spec.periodic else np.vstack([sites, sites[:1]])
    nt = spec.n_per_unit
    out = np.empty(spec.t + 1)
    for j in range(spec.t + 1):
        L = 2 ** j
        out[j] = max(_diameter(x[u * nt:(u + L) * nt + 1]) for u in range(0, spec.T, L))
    return out


def run_chain(spec: ModelSpec, config: McmcConfig,
              observables: Optional[Mapping[str, np.ndarray]] = None):
    """Run ``config.chains`` independent chains.

    ``observables`` maps names to grid-weight vectors (length ``N + 1``); the
    recorded value per retained sweep is ``v @ points`` (a ``d``-vector).
    Returns ``(list of ChainResult, McmcDiagnostics)``; the diagnostics pool
    all chains.
    """
    if observables is None:
        observables = default_observables(spec)
    names = list(observables)
    W = np.array([np.asarray(observables[k], dtype=float) for k in names])
    if W.shape[1] != spec.N + 1:
        raise SpecError(f"observable weights must have length {spec.N + 1}")
    W = np.ascontiguousarray(_site_weights(spec, W))
    kernel = build_kernel(spec)
    seqs = np.random.SeedSequence(int(config.seed)).spawn(config.chains)

    def job(ss):
        return _run_single(spec, config, kernel, W, names, ss)

    if config.chains == 1:
        raw = [job(seqs[0])]
    else:
        with ThreadPoolExecutor(max_workers=config.chains) as pool:
            raw = list(pool.map(job, seqs))
    results = []
    for series, acc, rep, fl in raw:
        results.append(ChainResult(series, None, rep.x.copy(), fl))
    diag = _diagnostics(results, raw, config, spec)
    for r in results:
        r.diagnostics = diag
    return results, diag


def _diagnostics(results, raw, config, spec):
    n = results[0].series[next(iter(results[0].series))].shape[0]
    iat, neff, degen = {}, {}, {}
    for name in results[0].series:
        taus = []
        flags = []
        for r in results:
            sq = r.squared(name)
            if sq.shape[0] >= 100:
                res = iat_analysis(sq)
                taus.append(res.tau)
                flags.append(res.degenerate)
            else:
                taus.append(0.5)
                flags.append(True)
        iat[name] = float(np.mean(taus))
        neff[name] = float(sum(n / (2 * t) for t in taus))
        degen[name] = all(flags)
    acc = {k: float(np.mean([a[k] for _, a, _, _ in raw])) for k in raw[0][1]}
    from ._accel import BACKEND

    return McmcDiagnostics(
        acceptance_rate=acc, iat=iat, effective_samples=neff,
        batch_count=min(config.batches, n) * len(results), retained_samples=n * len(results),
        proposal_scale=float(np.mean([rep.scale for _, _, rep, _ in raw])),
        tail_scale=float(np.mean([rep.tail_scale for _, _, rep, _ in raw])),
        energy_drift=float(max(rep.drift for _, _, rep, _ in raw)),
        degenerate=degen, backend=BACKEND,
    )


def estimate_observable(results: Sequence[ChainResult], name: str, batches: int = 32,
                        squared: bool = True, component: int = 0) -> EstimateWithError:
    """Estimate ``E|v.x|^2`` (``squared=True``) or ``E[(v.x)_component]``."""
    if squared:
        chains = [r.squared(name) for r in results]
    else:
        chains = [r.series[name][:, component] for r in results]
    return estimate_from_series(chains, batches)


def estimate_msd(spec: ModelSpec, config: McmcConfig) -> EstimateWithError:
    """Batch-means estimate of ``E|x_T|^2`` (periodic: ``E|x_T - x_{T/2}|^2``)."""
    results, _ = run_chain(spec, config, {"msd": msd_functional(spec)})
    return estimate_observable(results, "msd", config.batches)
