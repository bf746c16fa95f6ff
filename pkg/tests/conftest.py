import pytest

# criterion label -> list of (passed, detail) from the tests that carry it
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): tags a test with an acceptance criterion")


@pytest.fixture
def detail(request):
    """Call with a string to attach it to the acceptance summary line."""
    def add(text):
        request.node.user_properties.append(("detail", text))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        notes = [v for k, v in item.user_properties if k == "detail"]
        _ACCEPTANCE.setdefault(marker.args[0], []).append((rep.passed, "; ".join(notes)))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s[1:])):
        results = _ACCEPTANCE[label]
        ok = all(p for p, _ in results)
        notes = " | ".join(d for _, d in results if d)
        terminalreporter.write_line(f"{label} {'PASS' if ok else 'FAIL'}" + (f"  {notes}" if notes else ""))
