"""Collects acceptance outcomes and prints one line per criterion."""

import pytest

_outcomes = {}  # criterion -> list of (passed, detail)


@pytest.fixture
def report(request):
    """Attach a human-readable measurement to the current acceptance test."""
    notes = []
    request.node.acceptance_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    notes = getattr(item, "acceptance_notes", [])
    detail = "; ".join(notes) or item.name
    _outcomes.setdefault(marker.args[0], []).append((rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_outcomes, key=lambda c: (len(c), c)):
        for passed, detail in _outcomes[crit]:
            tr.write_line(f"{crit:<4} {'PASS' if passed else 'FAIL'}  {detail}")
