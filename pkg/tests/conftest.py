import numpy as np
import pytest

from bhcool.kerr import compute_kerr
from bhcool.manifolds import build_manifold
from bhcool.modes import modes_from_params
from bhcool.params import load_config
from bhcool.resources import load_working_point, nominal_config_path

VERDICTS = []


def report(criterion, ok, detail):
    """Print the single verdict line of an acceptance test and keep it for the summary."""
    line = f"ACCEPTANCE {criterion:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    VERDICTS.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def wp_params():
    return load_working_point()


@pytest.fixture(scope="session")
def nominal_cfg():
    params, fm, _ = load_config(nominal_config_path())
    return params, fm


@pytest.fixture(scope="session")
def wp_system(wp_params):
    mb = modes_from_params(wp_params)
    kerr = compute_kerr(mb)
    ms = {N: build_manifold(mb, kerr, N) for N in range(3)}
    return mb, kerr, ms


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
