import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gfmfreq.engine import SimConfig, simulate  # noqa: E402
from gfmfreq.metrics import evaluate  # noqa: E402
from gfmfreq.scenarios import load_bundled, make_substitution_series  # noqa: E402


@functools.lru_cache(maxsize=None)
def bundled(name):
    return load_bundled(name)


@functools.lru_cache(maxsize=None)
def run(name, dt=None, duration=None):
    scen = bundled(name)
    cfg = scen.sim
    if dt is not None or duration is not None:
        from dataclasses import replace

        cfg = replace(cfg, dt=dt or cfg.dt, duration=cfg.duration if duration is None else duration)
    series = simulate(scen, cfg)
    return series, evaluate(series, scen)


@functools.lru_cache(maxsize=None)
def ladder(name):
    """[(label, scenario, series, report)] over the bundled substitution series."""
    out = []
    for label, scen in make_substitution_series(bundled(name)):
        series = simulate(scen)
        out.append((label, scen, series, evaluate(series, scen, label=label)))
    return out


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    # compile (or load cached) kernels before anything is timed
    scen = bundled("single_gfm")
    from dataclasses import replace

    simulate(replace(scen, events=(), sim=replace(scen.sim, duration=0.01)))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
