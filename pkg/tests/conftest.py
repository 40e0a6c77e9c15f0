from __future__ import annotations

import numpy as np
import pytest

from phasorguard.datasets import ieee39, three_bus_chain, two_bus
from phasorguard.estimation import compute_F
from phasorguard.grid import build_topology
from phasorguard.secure_grid import secure


@pytest.fixture(scope="session")
def grid39():
    return ieee39()


@pytest.fixture(scope="session")
def topo39(grid39):
    return build_topology(grid39)


@pytest.fixture(scope="session")
def F39(topo39):
    return compute_F(topo39)


@pytest.fixture(scope="session")
def hardened39(grid39):
    grid, report = secure(grid39)
    return grid, report


@pytest.fixture
def chain():
    return three_bus_chain()


@pytest.fixture
def pair_grid():
    return two_bus()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def consistent_frame(grid, rng, spread=0.05):
    """Noise-free frame of a random state that satisfies the zero-injection rows."""
    from phasorguard.simulator import zero_injection_projection

    x = grid.nominal_voltages() * (1 + spread * rng.standard_normal(grid.n)) * np.exp(
        1j * spread * rng.standard_normal(grid.n))
    x = zero_injection_projection(grid, x)
    z = build_topology(grid).H @ x
    z[grid.n_phasors:] = 0.0
    return x, z


def load_schema(name):
    import json
    from importlib import resources

    return json.loads(resources.files("phasorguard").joinpath(f"schemas/{name}.schema.json").read_text())


# Acceptance results, filled by tests/test_acceptance.py and printed after the run.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})")
