import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def screening_tables():
    return json.loads((FIXTURES / "screening_tables.json").read_text())


# -- acceptance bookkeeping ---------------------------------------------------

_CRITERIA: dict[str, list[tuple[bool, str]]] = {}


def record_criterion(name: str, ok: bool, detail: str) -> None:
    _CRITERIA.setdefault(name, []).append((bool(ok), detail))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        checks = _CRITERIA[name]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        failed = [d for ok, d in checks if not ok]
        summary = "; ".join(failed) if failed else checks[-1][1]
        terminalreporter.write_line(f"{name}: {status} ({len(checks)} checks) {summary}")
