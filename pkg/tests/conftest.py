"""Every forward trace produced anywhere in the suite is checked for lifting consistency."""

import pytest

from liftdepth.model import LiftDepthNet, lifting_consistency

LIFTING_ERRORS: list[float] = []


@pytest.fixture(autouse=True, scope="session")
def _check_every_trace():
    original = LiftDepthNet.forward

    def checked(self, image):
        trace = original(self, image)
        report = lifting_consistency(self, trace)
        LIFTING_ERRORS.append(report.max_abs_error)
        assert report.passed, f"lifting consistency error {report.max_abs_error:.3e}"
        return trace

    LiftDepthNet.forward = LiftDepthNet.__call__ = checked
    yield
    LiftDepthNet.forward = LiftDepthNet.__call__ = original


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
