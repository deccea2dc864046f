import numpy as np
import pytest

from ellipscert.mixture import MixtureModel

ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_spd(rng, d, lo=0.3, hi=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(lo, hi, size=d)) @ Q.T


def random_model(rng, K, d, anisotropic=True, spread=2.0, priors=None):
    means = rng.standard_normal((K, d)) * spread
    covs = [random_spd(rng, d) if anisotropic else np.eye(d) for _ in range(K)]
    if priors is None:
        priors = np.full(K, 1.0 / K)
    return MixtureModel.from_params(means, covs, priors)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
