import numpy as np
import pytest

from vcontrol import heom, lindblad, model

# Acceptance tests record one line per criterion here; the summary hook prints them.
ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return passed


@pytest.fixture(scope="session")
def default_map():
    """Field-free HEOM images of the operator basis for the default baths."""
    cfg = heom.HeomConfig(step_limit=0.2)
    times, maps = heom.basis_map(cfg, n_steps=200)
    dm = lindblad.decoherence_matrix(maps, times, h0=model.build_h0(cfg.spec))
    return times, maps, dm


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
