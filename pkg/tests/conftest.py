"""Per-criterion pass/fail summary for the acceptance suite."""

import collections

CRITERIA = {
    1: "ideal-gas cross-validation",
    2: "three-mode sphere oracle",
    3: "effective frequency vs T",
    4: "N0 decreasing in g",
    5: "dispersion minimum at small negative g",
    6: "g1 width vs condensate width",
    7: "numerical invariant suite",
}

_outcomes = collections.defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            outcome = "xfail"
        else:
            outcome = report.outcome
        props = report.user_properties
        notes = [v for k, v in props if k == "summary"]
        extra = any(k == "supplementary" for k, _ in props)
        _outcomes[marker].append((report.nodeid.split("::")[-1], outcome, notes, extra))


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))
            if m.kwargs.get("supplementary"):
                item.user_properties.append(("supplementary", True))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _outcomes.get(n)
        if not runs:
            tr.write_line(f"criterion {n} ({title}): NOT RUN")
            continue
        bad = [name for name, o, _, extra in runs if o != "passed" and not extra]
        verdict = "PASS" if not bad else "FAIL"
        detail = "" if not bad else " [not met: " + ", ".join(bad) + "]"
        tr.write_line(f"criterion {n} ({title}): {verdict}{detail}")
        for name, o, _, extra in runs:
            if extra:
                tr.write_line(f"    supplementary check {name}: {o}")
        for _, _, notes, _ in runs:
            for line in notes:
                tr.write_line(f"    {line}")
