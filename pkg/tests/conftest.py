import os
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "vulnkg" / "data" / "fixtures"


def pytest_collection_modifyitems(config, items):
    if os.environ.get("VULNKG_LIVE") == "1":
        return
    skip = pytest.mark.skip(reason="live network test; set VULNKG_LIVE=1")
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def nvd_records():
    from vulnkg.ingest import load_cves
    return load_cves("nvd", FIXTURES / "nvd")


@pytest.fixture(scope="session")
def cwe_records():
    from vulnkg.ingest import load_cwes
    return load_cwes(FIXTURES / "cwec.xml")


@pytest.fixture(scope="session")
def nvd_graph(nvd_records, cwe_records):
    from vulnkg.kgstore import build_graph
    return build_graph(nvd_records, cwe_records)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion, then enforce it."""
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
