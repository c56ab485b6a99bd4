import hashlib
from pathlib import Path

import pytest

from dqrp import ldpc


@pytest.fixture(scope="session")
def codes4000(request):
    """Default m = 4000 code database, cached on disk keyed by the LDPC source."""
    key = hashlib.sha256(Path(ldpc.__file__).read_bytes()).hexdigest()[:16]
    path = Path(request.config.cache.mkdir("dqrp")) / f"codes-4000-{key}.bin"
    if path.exists():
        return ldpc.read_database(path)
    db = ldpc.build_database(4000)
    ldpc.save_database(db, path)
    return db


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record the outcome of one part of an acceptance criterion.

    Usage: ``note = acceptance(n, "description")`` at the top of the test;
    ``note(text)`` attaches measured values to the summary line.  The outcome
    is filled in by the report hook below.
    """
    table = request.config.stash.setdefault(_ACCEPTANCE, {})

    def register(number: int, description: str):
        entry = table.setdefault(number, {"description": description, "parts": {}, "notes": []})
        entry["parts"][request.node.nodeid] = None
        return entry["notes"].append

    request.node._acceptance_table = table
    return register


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    table = getattr(item, "_acceptance_table", None)
    if table is None or rep.when not in ("setup", "call"):
        return
    for entry in table.values():
        parts = entry["parts"]
        if item.nodeid in parts and (rep.failed or rep.when == "call"):
            if parts[item.nodeid] is not False:
                parts[item.nodeid] = rep.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, None)
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        entry = table[number]
        results = list(entry["parts"].values())
        status = "PASS" if results and all(r is True for r in results) else "FAIL"
        terminalreporter.write_line(f"AC{number:<2} {status}  {entry['description']} ({sum(r is True for r in results)}/{len(results)} parts)")
        for line in entry["notes"]:
            terminalreporter.write_line(f"      {line}")
