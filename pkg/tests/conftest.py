import numpy as np
import pytest

from cbfuse.volgrid import Grid, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_volume(dims=(20, 18, 16), spacing=(1.5, 2.0, 2.5)):
    """Low-frequency analytic field with a known value range of [0, 1]."""
    g = Grid.centered(dims, spacing)
    p = g.world_points()
    ext = np.array(dims) * np.array(spacing)
    v = 0.5 + 0.5 * np.cos(2 * np.pi * p[:, 0] / ext[0]) * np.cos(2 * np.pi * p[:, 1] / ext[1]) \
        * np.cos(np.pi * p[:, 2] / ext[2])
    return Volume.from_grid(g, v)


_ACCEPTANCE = {}


def record_acceptance(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    _ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
