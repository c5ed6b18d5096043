"""Command-line entry point.

Usage::

    selfint <subcommand> [--config FILE] [--seed S] [--out DIR] [--format csv|json] [--key value ...]

Subcommands: exact, sample, scaling, verify, regimes, fixpoint, recursion.

Config files are flat ``key: value`` (or ``key = value``) text, one key per
line, ``#`` starts a comment.  Unknown keys are rejected.  Command-line flags
override file values.  Exit codes: 0 success, 1 a requested check failed,
2 bad configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import experiments as ex
from . import functionals as fn
from . import gaussian as gs
from . import hierarchy as hi
from . import sampler as smp
from .model import EnergyOverflowError, ModelSpec, Path, SpecError

SUBCOMMANDS = ("exact", "sample", "scaling", "verify", "regimes", "fixpoint", "recursion")
FORMATS = ("csv", "json")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    """Invalid configuration; ``source`` names the line or flag."""


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

def _int(text):
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _float(text):
    return float(text)


def _str(text):
    return str(text).strip()


def _opt(conv):
    def parse(text):
        return None if str(text).strip().lower() in ("none", "") else conv(text)

    parse.optional = True
    return parse


def _list(conv):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return tuple(conv(v) for v in text)
        parts = [p for p in str(text).replace(" ", "").split(",") if p]
        return tuple(conv(p) for p in parts)

    return parse


def _int_range(text):
    """``6..13`` or ``6,7,8``."""
    s = str(text).strip()
    if ".." in s:
        a, b = s.split("..")
        return tuple(range(_int(a), _int(b) + 1))
    return _list(_int)(s)


# key -> (section, converter, default)
SPEC_SCHEMA = {
    "t": (_int, 8), "alpha": (_float, 1.0), "gamma": (_float, 2.0), "xi": (_float, 2.0),
    "n_per_unit": (_int, 4), "dim": (_int, 1), "boundary": (_str, "pinned"),
}
_MC = smp.McmcConfig()
MCMC_SCHEMA = {
    "sweeps": (_int, _MC.sweeps), "burn_in": (_int, _MC.burn_in),
    "proposal_scale": (_float, _MC.proposal_scale),
    "block_move_period": (_int, _MC.block_move_period), "chains": (_int, _MC.chains),
    "tail_scale": (_opt(_float), None), "thin": (_int, _MC.thin), "batches": (_int, _MC.batches),
    "resync_period": (_int, _MC.resync_period),
    "tempering_ladder": (_opt(_list(_float)), None),
}
STUDY_SCHEMA = {
    "t_values": (_int_range, tuple(range(6, 14))), "method": (_str, ex.EXACT),
    "slope_band": (_opt(_list(_float)), None), "bound": (_opt(_str), None),
    "resolution": (_int, 64), "fp_c": (_float, 1.0), "fp_d": (_float, 0.5),
    "steps": (_int, 100), "sv_t": (_float, 1024.0),
}
RUN_SCHEMA = {
    "subcommand": (_str, "verify"), "seed": (_int, 0), "out": (_str, "selfint_out"),
    "format": (_str, "csv"),
}
SCHEMA = {**RUN_SCHEMA, **SPEC_SCHEMA, **MCMC_SCHEMA, **STUDY_SCHEMA}


@dataclass
class CliConfig:
    subcommand: str = "verify"
    spec: Dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in SPEC_SCHEMA.items()})
    mcmc: Dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in MCMC_SCHEMA.items()})
    study: Dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in STUDY_SCHEMA.items()})
    seed: int = 0
    out: str = "selfint_out"
    format: str = "csv"

    def model_spec(self, **changes) -> ModelSpec:
        return ModelSpec(**{**self.spec, **changes})

    def mcmc_config(self, **changes) -> smp.McmcConfig:
        return smp.McmcConfig(seed=self.seed, **{**self.mcmc, **changes})

    def flat(self) -> Dict[str, object]:
        return {"subcommand": self.subcommand, "seed": self.seed, "out": self.out,
                "format": self.format, **self.spec, **self.mcmc, **self.study}


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return str(v)


def serialize_config(cfg: CliConfig) -> str:
    """Config file text that parses back to ``cfg``."""
    return "".join(f"{k}: {_render(v)}\n" for k, v in cfg.flat().items())


def _split_line(line: str):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    for sep in (":", "="):
        if sep in body:
            k, v = body.split(sep, 1)
            return k.strip(), v.strip()
    raise ValueError("expected 'key: value' or 'key = value'")


def parse_config_text(text: str, flags: Optional[Dict[str, object]] = None,
                      origin: str = "<config>") -> CliConfig:
    """Parse config text, apply ``flags`` on top and validate."""
    values: Dict[str, object] = {}
    sources: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        where = f"{origin}:{lineno}"
        try:
            kv = _split_line(line)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if kv is None:
            continue
        k, v = kv
        if k not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {k!r}")
        if k in values:
            raise ConfigError(f"{where}: duplicate key {k!r}")
        try:
            values[k] = SCHEMA[k][0](v)
        except ValueError as exc:
            raise ConfigError(f"{where}: {k}: {exc}") from None
        sources[k] = where
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in SCHEMA:
            raise ConfigError(f"flag --{k}: unknown key")
        try:
            values[k] = SCHEMA[k][0](v)
        except ValueError as exc:
            raise ConfigError(f"flag --{k.replace('_', '-')}: {exc}") from None
        sources[k] = f"flag --{k.replace('_', '-')}"
    cfg = CliConfig()
    for k, v in values.items():
        if k in SPEC_SCHEMA:
            cfg.spec[k] = v
        elif k in MCMC_SCHEMA:
            cfg.mcmc[k] = v
        elif k in STUDY_SCHEMA:
            cfg.study[k] = v
        else:
            setattr(cfg, k, v)
    _validate(cfg, sources)
    return cfg


def parse_config(path: Optional[str] = None, flags: Optional[Dict[str, object]] = None) -> CliConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_config_text(text, flags, origin=path or "<config>")


def _blame(message: str, sources: Dict[str, str], default: str) -> str:
    """Prefix ``message`` with the source of the field it names."""
    head = message.split()[0] if message else ""
    key = head.rstrip(":,")
    return f"{sources.get(key, default)}: {message}"


def _validate(cfg: CliConfig, sources: Dict[str, str]):
    if cfg.subcommand not in SUBCOMMANDS:
        raise ConfigError(f"{sources.get('subcommand', 'subcommand')}: unknown subcommand "
                          f"{cfg.subcommand!r}; choose from {SUBCOMMANDS}")
    if cfg.format not in FORMATS:
        raise ConfigError(f"{sources.get('format', 'format')}: format must be csv or json")
    if cfg.study["method"] not in (ex.EXACT, ex.MCMC):
        raise ConfigError(f"{sources.get('method', 'method')}: method must be exact or mcmc")
    try:
        spec = cfg.model_spec()
    except SpecError as exc:
        raise ConfigError(_blame(str(exc), sources, "spec")) from None
    try:
        cfg.mcmc_config()
    except SpecError as exc:
        raise ConfigError(_blame(str(exc), sources, "mcmc")) from None
    band = cfg.study["slope_band"]
    if band is not None and (len(band) != 2 or band[0] > band[1]):
        raise ConfigError(f"{sources.get('slope_band', 'slope_band')}: slope_band must be 'lo,hi'")
    if cfg.study["bound"] is not None:
        try:
            hi.theorem_bound(cfg.study["bound"], max(spec.alpha, 1e-300), spec.T, spec.gamma,
                             spec.xi)
        except SpecError as exc:
            raise ConfigError(f"{sources.get('bound', 'bound')}: {exc}") from None
    if cfg.study["resolution"] < 16:
        raise ConfigError(f"{sources.get('resolution', 'resolution')}: resolution must be >= 16")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

@dataclass
class Outcome:
    stem: str
    header: tuple
    rows: list
    summary: dict
    passed: bool = True


def _manifest(cfg: CliConfig) -> ex.RunManifest:
    conf = dict(cfg.flat())
    conf.pop("out")
    conf.pop("format")
    return ex.RunManifest(cfg.subcommand, conf, cfg.seed)


def run_exact(cfg: CliConfig) -> Outcome:
    spec = cfg.model_spec()
    if not spec.is_gaussian:
        raise ConfigError("gamma: the exact solver requires gamma = 2")
    if spec.periodic:
        prof = gs.increment_variance_profile(gs.circulant_coefficients(spec))
        var = spec.dim * prof[1:]
        label = "var_increment"
    else:
        if spec.N > gs.MAX_DENSE:
            raise ConfigError(f"t: pinned exact solves are capped at N <= {gs.MAX_DENSE}")
        var = spec.dim * np.diag(gs.covariance_matrix(gs.assemble_precision(spec)))
        label = "var_point"
    k = np.arange(1, var.shape[0] + 1)
    rows = [(int(i), i / spec.n_per_unit, float(v)) for i, v in zip(k, var)]
    summary = {"spec": ex.spec_echo(spec), "msd": ex.exact_msd(spec)}
    if cfg.study["bound"] is not None:
        summary["bound"] = cfg.study["bound"]
        summary["bound_value"] = hi.theorem_bound(cfg.study["bound"], spec.alpha, spec.T,
                                                  spec.gamma, spec.xi)
    return Outcome("exact", ("index", "time", label), rows, summary)


def run_sample(cfg: CliConfig) -> Outcome:
    spec = cfg.model_spec()
    config = cfg.mcmc_config()
    obs = ex.crossval_observables(spec)
    results, diag = smp.run_chain(spec, config, obs)
    exact = {}
    if spec.is_gaussian and spec.N <= gs.MAX_DENSE:
        exact = ex.exact_variances(spec, obs)
    rows = []
    for k in obs:
        e = smp.estimate_observable(results, k, config.batches)
        ref = exact.get(k, math.nan)
        z = e.z_score(ref) if k in exact else math.nan
        rows.append((k, e.mean, e.std_error, e.n_effective, e.iat, ref, z))
    summary = {"spec": ex.spec_echo(spec), "acceptance_rate": diag.acceptance_rate,
               "energy_drift": diag.energy_drift, "backend": diag.backend,
               "retained_samples": diag.retained_samples}
    return Outcome("sample", ("observable", "mean", "std_error", "n_effective", "iat",
                              "exact", "z"), rows, summary)


def run_scaling(cfg: CliConfig) -> Outcome:
    spec = cfg.model_spec()
    method = cfg.study["method"]
    tv = cfg.study["t_values"]
    fit, rows = ex.scaling_study(spec, tv, method, cfg.mcmc_config() if method == ex.MCMC else None)
    band = cfg.study["slope_band"]
    flags = ex.assess_slope(fit, band=tuple(band) if band else None)
    summary = {"spec": ex.spec_echo(spec), "method": method, **fit.as_dict(),
               "tolerance_note": "slope bands are engineering choices; only slope >= "
                                 f"{ex.HARD_SLOPE_LIMIT} is a hard failure"}
    return Outcome("scaling", ex.SCALING_HEADER, ex.scaling_rows(rows), summary,
                   not flags["hard_fail"])


def run_regimes(cfg: CliConfig) -> Outcome:
    grid = ex.regime_figure(cfg.study["resolution"])
    return Outcome("regimes", ex.REGIME_HEADER, grid.rows(), {"metadata": grid.metadata})


def run_fixpoint(cfg: CliConfig) -> Outcome:
    C, d, n = cfg.study["fp_c"], cfg.study["fp_d"], cfg.study["steps"]
    try:
        res = [hi.fixed_point_iterate(C, d, k) for k in range(n + 1)]
    except SpecError as exc:
        raise ConfigError(f"fixpoint: {exc}") from None
    rows = [(k, r.value, r.error, r.error_bound, r.bound_holds) for k, r in enumerate(res)]
    ok = all(r.bound_holds for r in res)
    summary = {"C": C, "d": d, "fixed_point": res[0].fixed_point, "bound_holds": ok,
               "note": "the bound C/(1-d) d^n holds exactly iff the fixed point is >= 1/2"}
    return Outcome("fixpoint", ("n", "value", "error", "error_bound", "bound_holds"), rows,
                   summary, ok)


def run_recursion(cfg: CliConfig) -> Outcome:
    spec = cfg.model_spec()
    gamma, xi, n = spec.gamma, spec.xi, cfg.study["steps"]
    st = hi.a_r_recursion(gamma, xi, n, t=spec.t)
    rows = [(k, float(st.a_seq[k]), float(st.r_seq[k])) for k in range(st.a_seq.shape[0])]
    summary = {"gamma": gamma, "xi": xi, "overflow": st.overflow, "a_star": st.a_star,
               "beta_const": st.beta_const}
    ok = True
    if 0 < gamma < 2 and xi < 2:
        cap = hi.bounded_recursion_cap(gamma, xi)
        summary["cap"] = cap
        summary["r_max"] = float(np.max(st.r_seq))
        ok = bool(np.max(st.r_seq) <= cap) and not st.overflow
        summary["bounded"] = ok
    if 0 < gamma < 2:
        sv = hi.s_v_recursion(gamma, xi, cfg.study["sv_t"], 60)
        summary["sv_fixed_point"] = sv.fixed_point
        summary["sv_predicted_limit"] = sv.predicted_limit
        summary["sv_final_exponent"] = float(sv.exponent_trace[-1])
    return Outcome("recursion", ("n", "A", "r"), rows, summary, ok)


def verify_checks(seed: int = 0, n_per_unit: int = 2, fast: bool = True) -> Dict[str, dict]:
    """Small fixed-size property suite; every entry carries a ``passed`` flag."""
    rng = np.random.default_rng(seed)
    out: Dict[str, dict] = {}

    worst = 0.0
    for t in range(1, 9):
        spec = ModelSpec(t=t, alpha=0.0, n_per_unit=n_per_unit)
        for _ in range(20):
            steps = rng.standard_normal((spec.N, 1)) / math.sqrt(n_per_unit)
            path = Path(np.vstack([np.zeros((1, 1)), np.cumsum(steps, axis=0)]), spec)
            worst = max(worst, hi.telescoping_residual(path))
    out["telescoping"] = {"passed": worst < 1e-10, "max_residual": worst}

    spec = ModelSpec(t=4, alpha=0.0, n_per_unit=n_per_unit, dim=2)
    min_gap, max_rel = math.inf, 0.0
    for _ in range(50):
        steps = rng.standard_normal((spec.N, 2))
        path = Path(np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)]), spec)
        for l in range(spec.t):
            L = 2 ** l
            for u in range(0, spec.T - L, L):
                I1, I2 = (u, u + L), (u + L, u + 2 * L)
                gap = hi.quadform_gap(path, I1, I2)
                direct = hi.quadform_Q(path, I1, I2) - hi.quadform_Qtilde(path, I1, I2)
                corr = L * (hi.block_variance_form(path, I1) + hi.block_variance_form(path, I2))
                min_gap = min(min_gap, gap)
                max_rel = max(max_rel, abs(direct - corr) / max(abs(corr), 1e-300))
    out["quadform"] = {"passed": min_gap >= -1e-10 and max_rel < 1e-8, "min_gap": min_gap,
                       "max_identity_rel_error": max_rel}

    margins = []
    for T in (8, 16):
        for xi in (1.5, 2.5):
            rep = ex.domination_study(T, xi, (0.5, 1.0, 2.0), n_per_unit=n_per_unit)
            margins.append(min(r.margin for r in rep.rows))
    out["domination"] = {"passed": min(margins) >= -1e-8, "min_margin": min(margins)}

    worst_ratio = 0.0
    for t in (3, 4, 5):
        for xi in (1.5, 2.5):
            rep = hi.check_lemma_bound(ModelSpec(t=t, alpha=1.0, xi=xi, n_per_unit=n_per_unit))
            worst_ratio = max(worst_ratio, rep.exact / min(rep.bound_stated, rep.bound_proof))
    out["lemma_bound"] = {"passed": worst_ratio <= 1.0, "max_exact_over_bound": worst_ratio}

    sweeps = 3000 if fast else 10000
    cv = []
    for spec in (ModelSpec(t=3, alpha=0.0, n_per_unit=4),
                 ModelSpec(t=3, alpha=1.0, xi=2.0, n_per_unit=4, boundary="periodic")):
        cfg = smp.McmcConfig(sweeps=sweeps, burn_in=sweeps // 10, seed=seed, block_move_period=2)
        cv.append(ex.crossval_mcmc_exact(spec, cfg, min_effective=200))
    out["crossval"] = {"passed": all(r.passed for r in cv),
                       "max_abs_z": max(abs(r.z) for rep in cv for r in rep.rows) if all(
                           rep.rows for rep in cv) else math.inf}

    ok = True
    for gamma in (0.5, 1.0, 1.5):
        for xi in (0.5, 1.0, 1.5):
            st = hi.a_r_recursion(gamma, xi, 10000)
            ok &= (not st.overflow) and float(np.max(st.r_seq)) <= hi.bounded_recursion_cap(gamma, xi)
    sv = hi.s_v_recursion(1.0, 2.25, 1024.0, 80)
    diffs = np.abs(np.diff(sv.exponent_trace))
    ratio_ok = bool(np.allclose(diffs[1:20] / diffs[:19], 0.5, atol=1e-10))
    conv_ok = abs(sv.exponent_trace[-1] - sv.fixed_point) < 1e-10
    out["recursion"] = {"passed": bool(ok and ratio_ok and conv_ok), "r_bounded": bool(ok),
                        "sv_ratio": ratio_ok, "sv_converged": conv_ok}

    fp_ok = True
    for _ in range(100):
        d = rng.uniform(0.0, 0.99)
        C = rng.uniform(0.5 * (1 - d), 5.0)
        fp_ok &= hi.fixed_point_iterate(C, d, int(rng.integers(0, 60))).bound_holds
    out["fixpoint"] = {"passed": bool(fp_ok), "domain": "fixed point >= 1/2"}

    grid = ex.regime_figure(64)
    from .model import regime_classify

    same = all(regime_classify(float(g), float(x)).value == lab for g, x, lab in grid.rows())
    out["regimes"] = {"passed": same}
    return out


def run_verify(cfg: CliConfig) -> Outcome:
    checks = verify_checks(cfg.seed, n_per_unit=2)
    rows = [(k, v["passed"]) for k, v in checks.items()]
    ok = all(v["passed"] for v in checks.values())
    summary = {"passed": ok, "checks": {k: v["passed"] for k, v in checks.items()},
               "details": checks}
    return Outcome("verify", ("check", "passed"), rows, summary, ok)


RUNNERS = {"exact": run_exact, "sample": run_sample, "scaling": run_scaling,
           "verify": run_verify, "regimes": run_regimes, "fixpoint": run_fixpoint,
           "recursion": run_recursion}


def dispatch(cfg: CliConfig, stream=None) -> int:
    """Run the configured subcommand, persist its artifacts and return the exit code."""
    stream = stream or sys.stdout
    manifest = _manifest(cfg)
    try:
        with np.errstate(over="ignore"):
            outcome = RUNNERS[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (gs.SingularPrecisionError, gs.NonConvergenceError, EnergyOverflowError,
            FloatingPointError, np.linalg.LinAlgError, smp.InsufficientBatchesError,
            RuntimeError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.finish()
    summary = dict(outcome.summary)
    summary.setdefault("passed", outcome.passed)
    paths = ex.persist(cfg.out, outcome.stem, outcome.header, outcome.rows, summary, manifest,
                       cfg.format)
    print(f"{cfg.subcommand}: {'ok' if outcome.passed else 'CHECK FAILED'}", file=stream)
    for kind, p in paths.items():
        print(f"  {kind}: {p}", file=stream)
    return EXIT_OK if outcome.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key: value config file")
    for key, (conv, default) in SCHEMA.items():
        if key == "subcommand":
            continue
        common.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"default: {_render(default)}")
    parser = argparse.ArgumentParser(prog="selfint", description=__doc__.splitlines()[0])
    from . import __version__

    parser.add_argument("--version", action="version", version=f"selfint {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("config",) and v is not None}
    try:
        cfg = parse_config(args.config, flags)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
