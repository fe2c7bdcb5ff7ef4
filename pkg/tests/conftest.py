import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hdconfound.glm import Dataset

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record a one-line PASS/FAIL verdict for a numbered acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def random_dataset(rng, n, p, k, family="linear", scale=1.0):
    """Small random instance with a response drawn from ``family``."""
    x = rng.standard_normal((n, p))
    u = rng.standard_normal((n, k))
    eta = rng.standard_normal(p + k) * scale / np.sqrt(p + k)
    lp = np.column_stack([x, u]) @ eta
    if family == "linear":
        y = lp + rng.standard_normal(n)
    elif family == "logistic":
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-lp))).astype(float)
    else:
        y = rng.poisson(np.exp(np.minimum(lp, 3))).astype(float)
    return Dataset(y=y, d=x[:, 0].copy(), q=x[:, 1:].copy()), u
