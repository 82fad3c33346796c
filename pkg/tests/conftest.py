import pytest

from eecfl.config import default_config


def small_config(**changes):
    """Three-tier tree with a few hundred samples; seconds per run."""
    base = default_config().with_overrides(
        topology="r(e1(d1,d2),e2(d3,d4))", n=400, n_test=200, rounds=2, ae_public_n=2000)
    return base.with_overrides(**changes)


@pytest.fixture
def small_cfg():
    return small_config()


ACCEPTANCE_LINES = []


def report_criterion(number: int, passed: bool, detail: str, warning: str = "") -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    if warning:
        line += f"  [warning: {warning}]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
