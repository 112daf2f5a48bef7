import pytest

_results: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = getattr(item, "acceptance_detail", "")
    _results.append((number, title, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    merged: dict[int, list] = {}
    for number, title, status, detail in _results:
        merged.setdefault(number, []).append((title, status, detail))
    for number in sorted(merged):
        parts = merged[number]
        status = "PASS" if all(p[1] == "PASS" for p in parts) else "FAIL"
        if len(parts) == 1:
            title, _, detail = parts[0]
            text = title + (f" -- {detail}" if detail else "")
        else:
            text = "; ".join(f"{t.split(': ', 1)[-1]} {s}" for t, s, _ in parts)
        terminalreporter.write_line(f"[{status}] {number}. {text}")


@pytest.fixture
def detail(request):
    """Call ``detail("...")`` to attach a measurement to the acceptance line."""
    def record(text):
        request.node.acceptance_detail = text
    return record
