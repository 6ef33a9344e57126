import os

import numpy as np
import pytest

from capshift import modelgeom


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    """Keep the root cache out of the user's home directory."""
    d = tmp_path_factory.mktemp("rootcache")
    old = os.environ.get(modelgeom.CACHE_ENV)
    os.environ[modelgeom.CACHE_ENV] = str(d)
    modelgeom._DEFAULT_CACHE = None
    yield d
    modelgeom._DEFAULT_CACHE = None
    if old is None:
        os.environ.pop(modelgeom.CACHE_ENV, None)
    else:
        os.environ[modelgeom.CACHE_ENV] = old


@pytest.fixture(scope="session")
def axis_basis():
    """Axisymmetric basis used by the a = 1 solvers."""
    return modelgeom.build_basis(40, 10, 0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


EPS_TABLE = (0.2, 0.1, 0.05, 0.025)


@pytest.fixture(scope="session")
def galerkin_table(axis_basis):
    """Ground-state Galerkin shifts on the unit ball, a = 1, l_max = 40."""
    from capshift import capsolver

    samples, failures = capsolver.shift_table(EPS_TABLE, 1.0, 1, methods=("galerkin",), basis=axis_basis)
    assert not failures
    return samples


@pytest.fixture(scope="session")
def even_basis():
    """Reflection-even basis for the a < 1 solvers."""
    return modelgeom.build_basis(40, 4, "even")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
