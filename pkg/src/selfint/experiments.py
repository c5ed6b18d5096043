"""Orchestrated studies with persistence.

Every study returns an in-memory report and can be written to disk as a CSV
(one header row), a JSON summary and a JSON manifest sidecar.  Floats are
written with 17 significant digits so artifacts round-trip exactly.  The CSV
carries no timestamps, so re-running a manifest reproduces it byte for byte.
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from . import functionals as fn
from . import gaussian as gs
from . import sampler as smp
from .model import EnergyOverflowError, ModelSpec, RegimeLabel, SpecError, regime_classify

EXACT = "exact"
MCMC = "mcmc"

SCALING_TOLERANCE = 0.3
HARD_SLOPE_LIMIT = 0.95
MIN_FIT_POINTS = 4


def code_version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    out = "%.17g" % v
    if not any(c in out for c in ".en"):
        out += ".0"
    return out


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no inf/nan literals
        return format_float(obj) if math.isfinite(obj) else json.dumps(format_float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _json_value(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if dataclasses.is_dataclass(obj):
        return _json_value(dataclasses.asdict(obj), indent, level)
    if isinstance(obj, RegimeLabel):
        return json.dumps(obj.value)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float written as ``%.17g``."""
    return _json_value(obj, indent, 0) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, RegimeLabel):
        return v.value
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_text(path: str, text: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def spec_echo(spec: ModelSpec) -> dict:
    out = {f.name: getattr(spec, f.name) for f in dataclasses.fields(spec) if f.name != "potential"}
    out["potential"] = "power" if spec.potential is None else "custom"
    return out


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def config_digest(config: dict) -> str:
    return hashlib.sha256(dumps_json(config).encode()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance of one study; ``config`` fully determines the outputs."""

    study: str
    config: dict
    seed: int
    version: str = field(default_factory=code_version)
    started: str = field(default_factory=_now)
    finished: str = ""

    @property
    def digest(self) -> str:
        return config_digest({"study": self.study, "config": self.config, "seed": self.seed,
                              "version": self.version})

    def finish(self):
        self.finished = _now()
        return self

    def as_dict(self) -> dict:
        return {"study": self.study, "config_digest": self.digest, "seed": self.seed,
                "version": self.version, "started": self.started, "finished": self.finished,
                "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        m = cls(d["study"], d["config"], int(d["seed"]), d["version"], d["started"],
                d.get("finished", ""))
        if "config_digest" in d and d["config_digest"] != m.digest:
            raise ValueError("manifest digest does not match its config")
        return m


def persist(out_dir: str, stem: str, header, rows, summary: dict, manifest: RunManifest,
            fmt: str = "csv"):
    """Write the study artifacts and return their paths.

    ``fmt="csv"`` writes ``stem.csv`` plus the ``stem.json`` summary;
    ``fmt="json"`` folds the records into ``stem.json``.  A
    ``stem.manifest.json`` sidecar is always written.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    paths = {"json": os.path.join(out_dir, stem + ".json"),
             "manifest": os.path.join(out_dir, stem + ".manifest.json")}
    summary = dict(summary)
    summary["version"] = manifest.version
    summary["config_digest"] = manifest.digest
    if fmt == "csv":
        paths["csv"] = os.path.join(out_dir, stem + ".csv")
        write_text(paths["csv"], csv_text(header, rows))
    else:
        summary["records"] = [dict(zip(header, row)) for row in rows]
    write_text(paths["json"], dumps_json(summary))
    write_text(paths["manifest"], dumps_json(manifest.as_dict()))
    return paths


def _map_cells(fn_cell, cells, workers):
    """Evaluate independent cells; results come back in input order."""
    if workers is None:
        workers = min(len(cells), os.cpu_count() or 1)
    if workers <= 1 or len(cells) <= 1:
        return [fn_cell(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn_cell, cells))


# ---------------------------------------------------------------------------
# scaling fits
# ---------------------------------------------------------------------------

@dataclass
class ScalingFit:
    """Weighted least-squares line through ``(log T, log s_T)``.

    ``points`` holds ``(log T, log s_T, SE of log s_T)``.  With all SEs zero
    (exact data) the fit is unweighted and ``slope_se`` comes from residuals.
    """

    points: List[tuple]
    slope: float
    intercept: float
    slope_se: float
    r_squared: float
    flags: Dict[str, bool] = field(default_factory=dict)
    excluded: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "slope_se": self.slope_se,
                "r_squared": self.r_squared, "flags": dict(self.flags),
                "excluded_T": list(self.excluded), "n_points": len(self.points)}


def fit_loglog(x, y, se=None) -> ScalingFit:
    """Fit ``y = slope * x + intercept`` with inverse-variance weights from ``se``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < MIN_FIT_POINTS:
        raise ValueError(f"a scaling fit needs at least {MIN_FIT_POINTS} points, got {n}")
    se = np.zeros(n) if se is None else np.asarray(se, dtype=float)
    X = np.column_stack([x, np.ones(n)])
    weighted = bool(np.all(se > 0))
    w = 1.0 / se ** 2 if weighted else np.ones(n)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    resid = y - X @ beta
    if not weighted:
        dof = n - 2
        cov = cov * (float(resid @ resid) / dof)
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    pts = [(float(a), float(b), float(c)) for a, b, c in zip(x, y, se)]
    return ScalingFit(pts, float(beta[0]), float(beta[1]), float(math.sqrt(max(cov[0, 0], 0.0))),
                      r2)


def assess_slope(fit: ScalingFit, prediction: Optional[float] = None,
                 band: Optional[tuple] = None, tol: float = SCALING_TOLERANCE,
                 hard_limit: float = HARD_SLOPE_LIMIT) -> Dict[str, bool]:
    """Flag the slope against a band; only ``slope >= hard_limit`` is a hard failure."""
    if band is None and prediction is not None:
        band = (prediction - tol, prediction + tol)
    flags = {"hard_fail": fit.slope >= hard_limit}
    if band is not None:
        flags["within_band"] = band[0] <= fit.slope <= band[1]
    fit.flags.update(flags)
    return flags


def exact_msd(spec: ModelSpec) -> float:
    """``E|x_T|^2`` (pinned) or ``E|x_T - x_{T/2}|^2`` (periodic), summed over coordinates."""
    gs._require_quadratic(spec)
    if spec.periodic:
        op = gs.circulant_coefficients(spec)
        return spec.dim * gs.dft_increment_variance(op, 0, spec.N // 2)
    if spec.N > gs.MAX_DENSE:
        raise SpecError(f"pinned exact solves are capped at N <= {gs.MAX_DENSE}; use periodic")
    prec = gs.assemble_precision(spec)
    return spec.dim * gs.covariance_of_functionals(prec, [fn.endpoint(spec)]).matrix[0, 0]


@dataclass
class ScalingRow:
    T: int
    estimate: float
    std_error: float
    n_effective: float
    included: bool


def scaling_study(base_spec: ModelSpec, t_values: Sequence[int], method: str = EXACT,
                  config: Optional[smp.McmcConfig] = None, workers: Optional[int] = None):
    """Estimate ``s_T`` for each ``t`` and fit the log-log slope.

    Returns ``(ScalingFit, rows)``.  MCMC cells that cannot form 16 batches are
    excluded with a warning.
    """
    t_values = sorted(int(t) for t in t_values)
    if len(set(t_values)) < MIN_FIT_POINTS:
        raise SpecError(f"scaling studies need at least {MIN_FIT_POINTS} distinct t values")
    if method not in (EXACT, MCMC):
        raise SpecError(f"method must be 'exact' or 'mcmc', got {method!r}")
    if method == EXACT and not base_spec.is_gaussian:
        raise SpecError("the exact method requires gamma = 2 with the power-law potential")
    if method == MCMC and config is None:
        config = smp.McmcConfig()

    def cell(t):
        spec = base_spec.replace(t=t)
        if method == EXACT:
            return ScalingRow(spec.T, exact_msd(spec), 0.0, math.inf, True)
        cfg = config.replace(seed=int(np.random.SeedSequence([config.seed, t]).generate_state(1)[0]))
        try:
            est = smp.estimate_msd(spec, cfg)
        except smp.InsufficientBatchesError as exc:
            warnings.warn(f"T = {spec.T} excluded: {exc}")
            return ScalingRow(spec.T, math.nan, math.nan, 0.0, False)
        return ScalingRow(spec.T, est.mean, est.std_error, est.n_effective, True)

    rows = _map_cells(cell, t_values, workers)
    kept = [r for r in rows if r.included]
    if len(kept) < MIN_FIT_POINTS:
        raise RuntimeError(f"only {len(kept)} scaling points survived; need {MIN_FIT_POINTS}")
    x = np.log([r.T for r in kept])
    y = np.log([r.estimate for r in kept])
    se = None if method == EXACT else np.array([r.std_error / r.estimate for r in kept])
    fit = fit_loglog(x, y, se)
    fit.excluded = [r.T for r in rows if not r.included]
    return fit, rows


SCALING_HEADER = ("T", "estimate", "std_error", "n_effective", "included")


def scaling_rows(rows):
    return [(r.T, r.estimate, r.std_error, r.n_effective, r.included) for r in rows]


# ---------------------------------------------------------------------------
# MCMC against exact Gaussian values
# ---------------------------------------------------------------------------

def crossval_observables(spec: ModelSpec) -> Dict[str, np.ndarray]:
    """``msd`` plus three increments at fixed fractions of the grid."""
    N = spec.N
    obs = {"msd": smp.msd_functional(spec),
           "inc_q": fn.increment(spec, N // 4, 0),
           "inc_mid": fn.increment(spec, N // 2, N // 8)}
    if spec.periodic:
        obs["inc_e"] = fn.increment(spec, N // 8, 0)
    else:
        obs["inc_e"] = fn.increment(spec, N, N // 2)
    return obs


def exact_variances(spec: ModelSpec, observables: Dict[str, np.ndarray]) -> Dict[str, float]:
    """``E|v.x|^2`` summed over coordinates, from the dense precision."""
    gs._require_quadratic(spec)
    prec = gs.assemble_precision(spec)
    C = gs.covariance_of_functionals(prec, observables)
    return {k: spec.dim * C.variance(k) for k in observables}


@dataclass
class CrossvalRow:
    name: str
    exact: float
    mean: float
    std_error: float
    z: float
    n_effective: float
    passed: bool


@dataclass
class CrossvalReport:
    rows: List[CrossvalRow]
    passed: bool
    min_effective: float
    diagnostics: Optional[smp.McmcDiagnostics] = None
    error: str = ""

    def as_dict(self) -> dict:
        d = {"passed": self.passed, "min_effective": self.min_effective, "error": self.error,
             "checks": {r.name: r.passed for r in self.rows}}
        if self.diagnostics is not None:
            d["acceptance_rate"] = self.diagnostics.acceptance_rate
            d["energy_drift"] = self.diagnostics.energy_drift
            d["backend"] = self.diagnostics.backend
        return d


CROSSVAL_HEADER = ("observable", "exact", "mean", "std_error", "z", "n_effective", "passed")


def crossval_rows(report: CrossvalReport):
    return [(r.name, r.exact, r.mean, r.std_error, r.z, r.n_effective, r.passed)
            for r in report.rows]


def crossval_mcmc_exact(spec: ModelSpec, config: smp.McmcConfig, n_sigma: float = 3.0,
                        min_effective: float = 0.0,
                        max_rel_se: float = 0.25) -> CrossvalReport:
    """Compare MCMC estimates of four variances with the exact Gaussian values.

    Passes iff every ``|mean - exact| <= n_sigma * SE``, every standard error
    is at most ``max_rel_se * exact`` and every effective sample size reaches
    ``min_effective``.  The precision requirement keeps a chain that wanders
    off (and so has a huge SE) from passing on the z-score alone.  Sampler failures (for example a
    diverging chain) are reported as a failed comparison.
    """
    if not spec.is_gaussian:
        raise SpecError("cross-validation needs gamma = 2 with the power-law potential")
    obs = crossval_observables(spec)
    exact = exact_variances(spec, obs)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            results, diag = smp.run_chain(spec, config, obs)
        ests = {k: smp.estimate_observable(results, k, config.batches) for k in obs}
    except (EnergyOverflowError, FloatingPointError, smp.InsufficientBatchesError,
            smp.SeriesTooShortError) as exc:
        return CrossvalReport([], False, 0.0, None, f"{type(exc).__name__}: {exc}")
    rows = []
    for k in obs:
        e = ests[k]
        z = e.z_score(exact[k])
        ok = bool(math.isfinite(z) and abs(z) <= n_sigma
                  and e.std_error <= max_rel_se * exact[k]
                  and e.n_effective >= min_effective)
        rows.append(CrossvalRow(k, exact[k], e.mean, e.std_error, z, e.n_effective, ok))
    neff = min(r.n_effective for r in rows)
    return CrossvalReport(rows, all(r.passed for r in rows), neff, diag)


# ---------------------------------------------------------------------------
# discrete domination
# ---------------------------------------------------------------------------

def domination_coefficients(xi: float, t: int, inflation: float = 1.0) -> np.ndarray:
    """Per-level block penalties ``inflation * 2^{-xi (l + 1)}`` for ``l = 0..t``."""
    l = np.arange(t + 1)
    return inflation * 2.0 ** (-xi * (l + 1.0))


@dataclass
class DominationRow:
    alpha: float
    margin: float
    passed: bool
    critical_inflation: float


@dataclass
class DominationReport:
    T: int
    xi: float
    inflation: float
    tol: float
    rows: List[DominationRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def as_dict(self) -> dict:
        return {"T": self.T, "xi": self.xi, "inflation": self.inflation, "tol": self.tol,
                "passed": self.passed, "min_margin": min(r.margin for r in self.rows)}


DOMINATION_HEADER = ("alpha", "margin", "passed", "critical_inflation")


def domination_rows(report: DominationReport):
    return [(r.alpha, r.margin, r.passed, r.critical_inflation) for r in report.rows]


def _critical_inflation(full: np.ndarray, brown: np.ndarray, hier: np.ndarray) -> float:
    """Largest factor ``k`` with ``brown + k (hier - brown) <= full`` as precisions."""
    H = hier - brown
    K = full - brown
    if not np.any(H):
        return math.inf
    # Cov(full) <= Cov(hier, k) iff brown + k H <= full as precisions, i.e.
    # k <= 1 / lambda_max(H, K).  K is positive definite for alpha > 0.
    lam = scipy.linalg.eigh(H, K, eigvals_only=True)
    top = float(lam[-1])
    return 1.0 / top if top > 0 else math.inf


def domination_study(T: int, xi: float, alpha_grid: Sequence[float], n_per_unit: int = 4,
                     inflation: float = 1.0, tol: float = 1e-8) -> DominationReport:
    """Loewner check ``Cov(full model) <= Cov(hierarchical)`` on the pinned path.

    The hierarchical measure penalizes both endpoint chains with
    ``alpha * inflation * 2^{-xi (l + 1)} |s^{2^l}|^2``.
    """
    if T < 2 or T & (T - 1) or T > 64:
        raise SpecError("domination studies need dyadic 2 <= T <= 64")
    t = int(round(math.log2(T)))
    a_seq = gs.a_seq_from_block_coefficients(domination_coefficients(xi, t, inflation))
    rows = []
    for alpha in alpha_grid:
        spec = ModelSpec(t=t, alpha=float(alpha), gamma=2.0, xi=xi, n_per_unit=n_per_unit)
        full = gs.assemble_precision(spec)
        hier = gs.hier_precision(spec, a_seq)
        for p in (full, hier):
            if np.linalg.eigvalsh(p.entries)[0] <= 0:
                raise gs.SingularPrecisionError(f"indefinite precision at alpha = {alpha}")
        margin = gs.loewner_margin(gs.covariance_matrix(full), gs.covariance_matrix(hier))
        crit = math.inf
        if alpha > 0:
            crit = inflation * _critical_inflation(full.entries, gs.brownian_precision(spec),
                                                   hier.entries)
        rows.append(DominationRow(float(alpha), margin, margin >= -tol, crit))
    return DominationReport(T, float(xi), float(inflation), tol, rows)


# ---------------------------------------------------------------------------
# regime grid
# ---------------------------------------------------------------------------

GAMMA_RANGE = (0.0, 2.0)
XI_RANGE = (0.0, 4.0)
DOTTED_XI = 3.0


@dataclass
class RegimeGrid:
    gammas: np.ndarray
    xis: np.ndarray
    labels: List[List[RegimeLabel]]

    @property
    def metadata(self) -> dict:
        return {"gamma_range": list(GAMMA_RANGE), "xi_range": list(XI_RANGE),
                "resolution": [len(self.gammas), len(self.xis)],
                "cells": "centres", "dotted_line_xi": DOTTED_XI,
                "labels": [r.value for r in RegimeLabel]}

    def rows(self):
        return [(g, x, self.labels[i][j].value) for i, g in enumerate(self.gammas)
                for j, x in enumerate(self.xis)]


REGIME_HEADER = ("gamma", "xi", "label")


def regime_figure(resolution: int = 64) -> RegimeGrid:
    """Cell-centre grid over ``(0, 2) x (0, 4)`` labelled by ``regime_classify``."""
    if int(resolution) != resolution or resolution < 16:
        raise SpecError("resolution must be an integer >= 16")
    n = int(resolution)
    g = GAMMA_RANGE[0] + (np.arange(n) + 0.5) * (GAMMA_RANGE[1] - GAMMA_RANGE[0]) / n
    x = XI_RANGE[0] + (np.arange(n) + 0.5) * (XI_RANGE[1] - XI_RANGE[0]) / n
    labels = [[regime_classify(float(gi), float(xj)) for xj in x] for gi in g]
    return RegimeGrid(g, x, labels)
