import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", deadline=None, max_examples=40)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=8)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def path_tree(n):
    """Path 0-1-...-(n-1) as a 1 x n grid tree, edge i joins i and i+1."""
    from treefilter.spanning import root_tree

    return root_tree(n, [(i, i + 1, i) for i in range(n - 1)], 0)


# acceptance criteria report: one line per criterion at the end of the run
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}  {detail}".rstrip())
