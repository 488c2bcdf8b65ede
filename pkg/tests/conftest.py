import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vnfpp.topology import build_fat_tree  # noqa: E402
from vnfpp.workload import generate_instance  # noqa: E402


@pytest.fixture(scope="session")
def k4():
    return build_fat_tree(4, 3)


@pytest.fixture(scope="session")
def k4_instance(k4):
    return generate_instance(k4, 0.5, seed=1)


@pytest.fixture(scope="session")
def constrained_instance(k4):
    return generate_instance(k4, 0.5, seed=2, anti_affinity=2, limited_vnfs=2, license_fraction=0.2)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = test_acceptance.RESULTS
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
