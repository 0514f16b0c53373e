import pytest

RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def record(request):
    """Store a named PASS/FAIL outcome for the end-of-run summary; returns the outcome."""
    store = request.config.stash.setdefault(RESULTS, {})

    def _record(name: str, ok: bool, detail: str = "") -> bool:
        store[name] = (bool(ok), detail)
        print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(RESULTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(store, key=lambda s: int(s.split()[0][1:])):
        ok, detail = store[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
