import pytest

_ACCEPTANCE = pytest.StashKey[dict]()
_CRITERIA = range(1, 10)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    store = request.config.stash[_ACCEPTANCE]

    def report(number: int, ok: bool, detail: str) -> bool:
        store[number] = (bool(ok), detail)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_ACCEPTANCE, {})
    ran = any("test_acceptance" in r.nodeid for rs in terminalreporter.stats.values() for r in rs if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in _CRITERIA:
        if n in store:
            ok, detail = store[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  no result recorded (see traceback above)")
