from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"
MINI = FIXTURES / "mini_flores"
APPENDIX = FIXTURES / "appendix"

sys.path.insert(0, str(TESTS))


@pytest.fixture
def mini_copy(tmp_path):
    """Writable copy of the mini corpus, so replay runs can prove the cache is untouched."""
    import shutil

    dst = tmp_path / "mini"
    shutil.copytree(MINI, dst)
    return dst


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
