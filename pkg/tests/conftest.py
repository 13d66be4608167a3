import warnings

import numpy as np
import pytest

from zeroflow import cells
from zeroflow.ensemble import preset
from zeroflow.equilibrium import solve_equilibrium
from zeroflow.geometry import fubini_study, metric_from_descriptor

_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(num, ok, detail=""):
        _RESULTS.append((num, bool(ok), detail))
        return ok
    return _record


@pytest.fixture(scope="session")
def fs():
    return fubini_study()


@pytest.fixture(scope="session")
def fs_gc(fs):
    return fs.green_constant()


@pytest.fixture(scope="session")
def kh():
    return metric_from_descriptor({"kind": "kh_flat"})


@pytest.fixture(scope="session")
def kh_gc(kh):
    return kh.green_constant()


@pytest.fixture(scope="session")
def bump():
    return metric_from_descriptor({"kind": "bump", "amplitude": 0.1})


@pytest.fixture(scope="session")
def bump_gc(bump):
    return bump.green_constant()


@pytest.fixture(scope="session")
def circle512():
    return cells.circle(1.0, 512)


@pytest.fixture(scope="session")
def kh_eq(kh, kh_gc, circle512):
    return solve_equilibrium(kh, kh_gc, circle512)


@pytest.fixture(scope="session")
def grid32():
    return cells.sphere_grid(32)


@pytest.fixture(scope="session")
def kh_preset():
    return preset("kh", 10)


@pytest.fixture(scope="session")
def fs_preset():
    return preset("fs", 10)


@pytest.fixture(autouse=True)
def _quiet_precision():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
