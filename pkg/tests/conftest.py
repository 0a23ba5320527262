from importlib.resources import files
from pathlib import Path

import pytest

from dynrmst import load_pbc
from dynrmst.landmark import LandmarkGrid, stack

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(str(files("dynrmst") / "data"))
PBC_CONFIG = ROOT / "configs" / "pbc.yaml"

# acceptance outcomes, printed in the terminal summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def pbc():
    return load_pbc()


@pytest.fixture(scope="session")
def paper_grid():
    return LandmarkGrid(0.0, 5.0, 0.2, 5.0)


@pytest.fixture(scope="session")
def pbc_stacked(pbc, paper_grid):
    return stack(pbc, paper_grid)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
