import pytest

_details = pytest.StashKey[dict]()
_outcomes = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_details] = {}
    config.stash[_outcomes] = {}


@pytest.fixture
def criterion(request):
    """Attach a one-line measurement summary to an acceptance test."""
    def note(number: int, text: str) -> None:
        request.config.stash[_details][number] = text
        print(f"criterion {number}: {text}")
    return note


def _number(item_name: str):
    # test_criterion_07_conservation -> 7
    parts = item_name.split("_")
    if len(parts) > 2 and parts[0] == "test" and parts[1] == "criterion":
        return int(parts[2])
    return None


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_makereport(item, call):
    n = _number(item.name)
    if n is None:
        return
    outcomes = item.config.stash[_outcomes]
    if call.excinfo is not None and call.when in ("setup", "call"):
        outcomes[n] = "FAIL"
    elif call.when == "call":
        outcomes.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter, config):
    outcomes = config.stash.get(_outcomes, {})
    if not outcomes:
        return
    details = config.stash.get(_details, {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        terminalreporter.write_line(f"criterion {n:2d}: {outcomes[n]}  {details.get(n, '')}")
