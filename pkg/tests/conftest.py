import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hpsd(rng, p, rank=None):
    """Random Hermitian positive semidefinite p x p matrix."""
    k = p if rank is None else rank
    a = rng.standard_normal((p, k)) + 1j * rng.standard_normal((p, k))
    return a @ a.conj().T


ACCEPTANCE = []  # (criterion, passed, detail) filled by test_acceptance


def report_criterion(name, passed, detail):
    ACCEPTANCE.append((name, bool(passed), detail))
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    assert passed, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
