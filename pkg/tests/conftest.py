import re
from pathlib import Path

import pytest

from nextpoi.pipeline import dataset_from_traces
from nextpoi.synthetic import gps_traces, periodic_dataset, write_gps_csv

DATA_DIR = Path(__file__).parent / "data"

_acceptance: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    n, name = int(m.group(1)), m.group(2).replace("_", " ")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[n] = (name, "PASS" if report.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        name, verdict = _acceptance[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {name}")


@pytest.fixture(scope="session")
def periodic():
    return periodic_dataset()


@pytest.fixture(scope="session")
def traces():
    return gps_traces()


@pytest.fixture(scope="session")
def gps_ds(traces):
    return dataset_from_traces(traces)


@pytest.fixture(scope="session")
def gps_csv(tmp_path_factory, traces):
    path = tmp_path_factory.mktemp("fixture") / "gps.csv"
    write_gps_csv(path, traces)
    return path
