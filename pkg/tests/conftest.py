import numpy as np
import pytest

from segt.attention import AttentionParams
from segt.voxelizer import GridSpec

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def numeric_grad(fn, t, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``t`` (mutated in place)."""
    g = np.zeros_like(t)
    for i in np.ndindex(t.shape):
        keep = t[i]
        t[i] = keep + h
        up = fn()
        t[i] = keep - h
        down = fn()
        t[i] = keep
        g[i] = (up - down) / (2 * h)
    return g


def random_params(c, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return AttentionParams(**{k: rng.normal(scale=scale, size=s)
                              for k, s in AttentionParams.shapes(c).items()})


def flat_coords(rng, n, side):
    """``n`` random coords on a ``side x side x 1`` grid (not necessarily distinct)."""
    return np.c_[rng.integers(0, side, (n, 2)), np.zeros(n, np.int64)]


@pytest.fixture
def grid16():
    return GridSpec.index_space((16, 16, 1))
