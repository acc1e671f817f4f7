import pytest

from cohash_aqp import presets
from cohash_aqp.datagen import GenConfig, generate
from cohash_aqp.partitioner import partition


@pytest.fixture(scope="session")
def small_db():
    return generate(GenConfig(scale=0.5, seed=3))


@pytest.fixture(scope="session")
def workload():
    return presets.workload()


@pytest.fixture(scope="session")
def sd_without_pdb(small_db):
    return partition(small_db, presets.sd_without(), 8, seed=1)


@pytest.fixture(scope="session")
def sd_with_pdb(small_db):
    return partition(small_db, presets.sd_with(), 8, seed=1)


@pytest.fixture(scope="session")
def wd_pdb(small_db):
    return partition(small_db, presets.wd(), 8, seed=1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
