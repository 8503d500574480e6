import pytest

# Acceptance tests append "CRITERION n ... PASS|FAIL" lines here; they are
# printed in the terminal summary whether or not output capture is on.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_ed_run():
    """The default ED run (N_image = 3, 100 iterations); shared because it
    takes about half a minute."""
    from qneb.driver import RunConfig, optimize

    return optimize(RunConfig())
