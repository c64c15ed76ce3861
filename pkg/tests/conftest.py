import pytest

from cbrw.model import pinned_model
from cbrw.pipeline import Params, Workspace
from cbrw import taboo as tb

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def pinned():
    return pinned_model()


@pytest.fixture(scope="session")
def workspace(pinned, tmp_path_factory):
    """Full-size pipeline on the pinned model (default stage parameters, seed 0)."""
    return Workspace(pinned, Params(), 0, str(tmp_path_factory.mktemp("pinned")))


@pytest.fixture(scope="session")
def est(workspace):
    return workspace.taboo()


@pytest.fixture(scope="session")
def spectral(workspace):
    return workspace.spectral()


@pytest.fixture(scope="session")
def solution(workspace):
    return workspace.phi()


@pytest.fixture(scope="session")
def ensemble(workspace):
    return workspace.ensemble(save=False)


@pytest.fixture(scope="session")
def small_est(pinned):
    """Cheap taboo estimate for unit tests: 2e4 paths, step 0.0125."""
    return tb.estimate_all(pinned, 20000, 11, horizon=102.4, cells=8192)
