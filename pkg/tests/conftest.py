import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
FIXTURE_DATA = FIXTURES / "data"
PREDICTIONS = FIXTURES / "predictions"


@pytest.fixture
def data_root(tmp_path):
    """Writable copy of the stored fixture datasets."""
    root = tmp_path / "data"
    shutil.copytree(FIXTURE_DATA, root)
    return root


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
