import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("selfint", deadline=None, max_examples=60)
settings.load_profile("selfint")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brownian_points(rng, spec, scale=1.0):
    """Random pinned or periodic path points with Brownian-like increments."""
    steps = scale * rng.standard_normal((spec.N, spec.dim)) / np.sqrt(spec.n_per_unit)
    pts = np.vstack([np.zeros((1, spec.dim)), np.cumsum(steps, axis=0)])
    if spec.periodic:
        pts = pts - np.linspace(0, 1, spec.N + 1)[:, None] * pts[-1]
        pts[-1] = pts[0]
    return pts


def pytest_terminal_summary(terminalreporter):
    mods = [m for name, m in sys.modules.items() if name.endswith("test_acceptance")]
    lines = [ln for m in mods for ln in getattr(m, "LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
