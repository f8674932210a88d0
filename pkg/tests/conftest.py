import json
import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"
TOY = FIXTURES / "toy_project"


@pytest.fixture(scope="session")
def manifest():
    return json.loads((FIXTURES / "coverage_manifest.json").read_text())


@pytest.fixture(scope="session")
def hashcode_test():
    return (GOLDEN / "testHashCode1609.java").read_text().rstrip("\n")


@pytest.fixture
def fixture_copy(tmp_path):
    """A private copy of the fixture tree, so runs never touch the originals."""
    dst = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, dst, ignore=shutil.ignore_patterns("golden", "run", "__pycache__"))
    return dst


# criterion number -> (passed, description); filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {text}")
