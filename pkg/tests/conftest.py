import numpy as np
import pytest

import sfalloc

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    cid, title = mark.args
    entry = _criteria.setdefault(cid, {"title": title, "ok": True, "tests": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["tests"].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: (int("".join(ch for ch in c if ch.isdigit()) or 0), c)):
        e = _criteria[cid]
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
        if not e["ok"]:
            for name, outcome in e["tests"]:
                if outcome != "passed":
                    terminalreporter.write_line(f"    {outcome}: {name}")


@pytest.fixture(scope="session")
def toy():
    return sfalloc.load_fixture("toy_3x2")


@pytest.fixture(scope="session")
def nonlife():
    return sfalloc.load_fixture("nonlife_case")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
