import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from autoeval.harness import benchmark_corpora  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else "FAIL"
        detail = props.get("detail", "")
        ACCEPTANCE_LINES.append(f"{status}  [{props['criterion']}] {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench_corpora():
    """Seed-42 benchmark: 300 training and 100 held-out meta-sets, C=10, N=1000."""
    return benchmark_corpora()
