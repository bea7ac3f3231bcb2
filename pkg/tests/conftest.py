import numpy as np
import pytest

from mhsaem.families import GaussianFamily, GaussianParams, SinhArcsinhFamily
from mhsaem.model import MixtureParams

_ACCEPTANCE = {}


def record_criterion(number, name, passed, detail=""):
    """Store and print one acceptance line; the summary hook repeats them."""
    line = f"CRITERION {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    _ACCEPTANCE[number] = line
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])


def random_gaussian_mixture(rng, K, D, spread=3.0):
    fam = GaussianFamily(D)
    comps = []
    for _ in range(K):
        A = rng.normal(size=(D, D)) * 0.4
        L = np.linalg.cholesky(A @ A.T + np.eye(D) * 0.5)
        comps.append(fam.pack(GaussianParams(rng.normal(size=D) * spread, L)))
    return MixtureParams(rng.normal(size=K), np.stack(comps), "gaussian", D)


def random_flow_mixture(rng, K, D):
    fam = SinhArcsinhFamily(D)
    comps = np.concatenate([rng.normal(size=(K, D)) * 2, rng.normal(size=(K, 3 * D)) * 0.3], axis=1)
    assert comps.shape[1] == fam.n_params
    return MixtureParams(rng.normal(size=K), comps, "sinh_arcsinh", D)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
