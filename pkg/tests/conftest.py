import numpy as np
import pytest

from dirlin.kde import DirLinSample

_CRITERIA = []


def random_sample(rng, n, q, dependent=False):
    xs = rng.normal(size=(n, q + 1))
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    zs = rng.normal(size=n)
    if dependent:
        zs = zs + 2.0 * xs[:, 0]
    return DirLinSample(xs, zs)


def random_rotation(rng, d):
    a = rng.normal(size=(d, d))
    qmat, r = np.linalg.qr(a)
    return qmat * np.sign(np.diag(r))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def record_criterion():
    """Record one acceptance line: ``record_criterion(k, passed, detail)``."""

    def _record(k, passed, detail):
        line = f"criterion {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append((k, line))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)
