import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from selfint.model import (EnergyOverflowError, ModelSpec, Path, RegimeLabel, SpecError,
                           build_kernel, energy, energy_delta, interaction_sum, kinetic_energy,
                           regime_classify, regime_edges, with_point)

from conftest import brownian_points


def brute_energy(points, spec):
    """Independent double loop over unordered pairs of stored sites."""
    x = np.asarray(points, dtype=float)
    nt = spec.n_per_unit
    kin = 0.5 * nt * sum(float(np.sum((x[j] - x[j - 1]) ** 2)) for j in range(1, x.shape[0]))
    sites = x[:-1] if spec.periodic else x
    M = sites.shape[0]
    inter = 0.0
    for i in range(M):
        for j in range(i + 1, M):
            lag = j - i
            if spec.periodic:
                lag = min(lag, M - lag)
            g = 1.0 / (1.0 + (lag / nt) ** spec.xi)
            inter += g * spec.radial(np.linalg.norm(sites[j] - sites[i]))
    return kin + spec.alpha / nt ** 2 * inter


# --- ModelSpec / Path -------------------------------------------------------

def test_spec_derived_sizes():
    s = ModelSpec(t=3, n_per_unit=4)
    assert (s.T, s.N, s.n_sites) == (8, 32, 33)
    assert ModelSpec(t=3, n_per_unit=4, boundary="periodic").n_sites == 32


@pytest.mark.parametrize("kw", [dict(t=0), dict(t=2, gamma=2.5), dict(t=2, gamma=0.0),
                                dict(t=2, alpha=-1.0), dict(t=2, xi=-0.1),
                                dict(t=2, n_per_unit=0), dict(t=2, dim=0),
                                dict(t=2, boundary="free"), dict(t=2, zeta=0.5)])
def test_spec_rejects_invalid(kw):
    with pytest.raises(SpecError):
        ModelSpec(**kw)


def test_custom_potential_declares_zeta():
    s = ModelSpec(t=1, gamma=1.0, zeta=0.5, potential=lambda r: r + r ** 2)
    assert s.radial(np.array([2.0]))[0] == 6.0
    assert not s.is_gaussian


def test_path_invariants():
    s = ModelSpec(t=1, n_per_unit=2)
    with pytest.raises(SpecError):
        Path(np.ones(s.N + 1), s)
    with pytest.raises(SpecError):
        Path(np.zeros(s.N), s)
    p = Path.zeros(s)
    assert p.points.shape == (5, 1)
    assert not p.points.flags.writeable
    per = s.replace(boundary="periodic")
    with pytest.raises(SpecError):
        Path(np.arange(per.N + 1.0), per)
    q = Path.from_sites(np.arange(per.N, dtype=float), per)
    assert q.points[-1, 0] == q.points[0, 0]


# --- kernel -----------------------------------------------------------------

def test_kernel_examples():
    assert build_kernel(ModelSpec(t=1, xi=3.7)).values[0] == 1.0
    assert build_kernel(ModelSpec(t=1, xi=2.0, n_per_unit=1)).values[1] == 0.5
    assert build_kernel(ModelSpec(t=1, xi=1.0, n_per_unit=2)).values[1] == pytest.approx(2 / 3, abs=1e-15)


@given(xi=st.floats(0.01, 5.0), nt=st.integers(1, 6), t=st.integers(1, 4))
def test_kernel_monotone_and_bounded(xi, nt, t):
    v = build_kernel(ModelSpec(t=t, xi=xi, n_per_unit=nt)).values
    assert v.shape == (nt * 2 ** t + 1,)
    assert np.all(v > 0) and np.all(v <= 1)
    assert np.all(np.diff(v) < 0)


def test_kernel_xi_zero_is_half_beyond_origin():
    v = build_kernel(ModelSpec(t=2, xi=0.0)).values
    assert v[0] == 1.0 and np.all(v[1:] == 0.5)


# --- energy -----------------------------------------------------------------

def test_energy_zero_path():
    s = ModelSpec(t=2, alpha=3.0, gamma=1.3)
    assert energy(Path.zeros(s), s, build_kernel(s)) == 0.0


def test_energy_two_point_free():
    s = ModelSpec(t=1, alpha=0.0, n_per_unit=1)
    # t=1 means three points; the first increment carries the energy
    p = Path(np.array([0.0, 1.0, 1.0]), s)
    assert energy(p, s, build_kernel(s)) == 0.5


def test_energy_hand_example():
    s = ModelSpec(t=1, alpha=1.0, gamma=2.0, xi=0.0, n_per_unit=1)
    p = Path(np.array([0.0, 1.0, 2.0]), s)
    assert energy(p, s, build_kernel(s)) == pytest.approx(4.0, abs=1e-14)


@pytest.mark.parametrize("boundary", ["pinned", "periodic"])
@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_energy_matches_brute_force(rng, boundary, gamma):
    s = ModelSpec(t=2, alpha=1.7, gamma=gamma, xi=1.3, n_per_unit=3, dim=2, boundary=boundary)
    pts = brownian_points(rng, s)
    e = energy(Path(pts, s), s, build_kernel(s))
    assert e == pytest.approx(brute_energy(pts, s), rel=1e-12)


def test_energy_custom_potential(rng):
    f = lambda r: np.log1p(r ** 2)
    s = ModelSpec(t=2, alpha=0.9, gamma=2.0, xi=1.0, n_per_unit=2, potential=f, zeta=0.1)
    pts = brownian_points(rng, s)
    assert energy(Path(pts, s), s, build_kernel(s)) == pytest.approx(brute_energy(pts, s), rel=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0.2, 2.0), xi=st.floats(0.0, 4.0))
def test_energy_nonnegative(seed, gamma, xi):
    s = ModelSpec(t=2, alpha=2.0, gamma=gamma, xi=xi, n_per_unit=2)
    pts = brownian_points(np.random.default_rng(seed), s, scale=3.0)
    assert energy(Path(pts, s), s, build_kernel(s)) >= 0.0


def test_periodic_translation_invariance(rng):
    s = ModelSpec(t=2, alpha=1.0, gamma=1.5, xi=2.0, n_per_unit=2, dim=2, boundary="periodic")
    pts = brownian_points(rng, s)
    k = build_kernel(s)
    e0 = energy(Path(pts, s), s, k)
    e1 = energy(Path(pts + np.array([3.0, -1.0]), s), s, k)
    assert e1 == pytest.approx(e0, rel=1e-12)


def test_energy_overflow_signalled():
    s = ModelSpec(t=1, alpha=1.0, n_per_unit=1)
    p = Path(np.array([0.0, 1e200, -1e200]), s)
    with pytest.raises(EnergyOverflowError):
        energy(p, s, build_kernel(s))


def test_energy_parts_add_up(rng):
    s = ModelSpec(t=2, alpha=2.5, gamma=1.0, xi=1.0, n_per_unit=2)
    p = Path(brownian_points(rng, s), s)
    k = build_kernel(s)
    total = kinetic_energy(p, s) + s.alpha / s.n_per_unit ** 2 * interaction_sum(p, s, k)
    assert energy(p, s, k) == pytest.approx(total, rel=1e-14)


# --- energy_delta -------------------------------------------------------------

@pytest.mark.parametrize("boundary", ["pinned", "periodic"])
def test_energy_delta_oracle_1000(rng, boundary):
    worst = 0.0
    for trial in range(1000):
        gamma = [0.7, 1.0, 2.0][trial % 3]
        s = ModelSpec(t=2, alpha=1.3, gamma=gamma, xi=1.5, n_per_unit=2, dim=1 + trial % 2,
                      boundary=boundary)
        k = build_kernel(s)
        p = Path(brownian_points(rng, s), s)
        lo = 0 if s.periodic else 1
        site = int(rng.integers(lo, s.N + 1))
        prop = p.points[site] + rng.standard_normal(s.dim)
        direct = energy(with_point(p, site, prop), s, k) - energy(p, s, k)
        fast = energy_delta(p, site, prop, s, k)
        worst = max(worst, abs(fast - direct) / max(1.0, abs(direct)))
    assert worst < 1e-10


def test_energy_delta_noop_and_free_case(rng):
    s = ModelSpec(t=2, alpha=0.0, n_per_unit=2)
    k = build_kernel(s)
    p = Path(brownian_points(rng, s), s)
    assert energy_delta(p, 3, p.points[3], s, k) == 0.0
    x = p.points[:, 0]
    prop = x[3] + 0.7
    expect = 0.5 * s.n_per_unit * ((prop - x[2]) ** 2 + (x[4] - prop) ** 2
                                   - (x[3] - x[2]) ** 2 - (x[4] - x[3]) ** 2)
    assert energy_delta(p, 3, [prop], s, k) == pytest.approx(expect, rel=1e-12)


def test_energy_delta_index_errors():
    s = ModelSpec(t=1, n_per_unit=1)
    p, k = Path.zeros(s), build_kernel(s)
    with pytest.raises(IndexError):
        energy_delta(p, 0, [1.0], s, k)
    with pytest.raises(IndexError):
        energy_delta(p, s.N + 1, [1.0], s, k)


# --- regimes ------------------------------------------------------------------

def test_regime_examples():
    assert regime_classify(1.0, 0.3) is RegimeLabel.VarianceCollapse
    assert regime_classify(1.0, 1.0) is RegimeLabel.BoundedVariance
    assert regime_classify(1.5, 3.2) is RegimeLabel.Diffusive
    assert regime_classify(1.0, 1.75) is RegimeLabel.LogOrSubdiffusive
    assert regime_classify(1.0, 2.25) is RegimeLabel.Subdiffusive


def test_regime_edges_left_closed():
    g = 1.0
    labels = [regime_classify(g, e) for e in regime_edges(g)]
    assert labels == [RegimeLabel.BoundedVariance, RegimeLabel.LogOrSubdiffusive,
                      RegimeLabel.Subdiffusive, RegimeLabel.Diffusive]


@pytest.mark.parametrize("g", [0.0, 2.0, -1.0])
def test_regime_rejects_gamma(g):
    with pytest.raises(SpecError):
        regime_classify(g, 1.0)


@given(g=st.floats(0.01, 1.99), xi=st.floats(0.0, 4.0))
def test_regime_changes_only_across_edges(g, xi):
    edges = regime_edges(g)
    lab = regime_classify(g, xi)
    k = sum(xi >= e for e in edges)
    assert lab is list(RegimeLabel)[k]
