import json
from pathlib import Path

import numpy as np
import pytest

from pulseopt.io import load_fixture

FIXTURE_DIR = Path(__file__).parent / "fixtures"

# printed digits of the three published pulse sets, channel by channel
PUBLISHED = {
    "table1": [
        ("18.9032811", "3.227598027", "3.552287843", "-0.208536178"),
        ("14.95405537", "4.942187821", "28.22099145", "4.953080222"),
        ("20.94907939", "5.234351941", "33.03312243", "0.061713435"),
        ("16.89870222", "3.616342008", "3.472354099", "-5.125913793"),
    ],
    "table2": [
        ("25.99837314", "3.622208677", "13.00608085", "3.571861571"),
        ("22.90506102", "4.021947620", "22.96440215", "3.574703202"),
        ("21.56536551", "3.282861957", "20.91424811", "-3.255710582"),
        ("20.05748673", "2.888952454", "5.013657599", "-3.061313302"),
    ],
    "table3": [
        ("26.13033743", "3.940057889", "32.00000000", "0.101091573"),
        ("22.63505033", "4.000000000", "32.00000000", "0.000448309"),
        ("20.28044792", "4.000000000", "22.68347007", "-0.004890434"),
        ("15.00000000", "4.000000000", "30.00000000", "-0.003750851"),
    ],
}


def published_vector(name):
    return np.array([float(v) for row in PUBLISHED[name] for v in row])


@pytest.fixture(scope="session")
def regression():
    return json.loads((FIXTURE_DIR / "regression.json").read_text())


@pytest.fixture(scope="session")
def table3():
    return load_fixture("table3")


@pytest.fixture(scope="session")
def table3_run(table3):
    prob = table3.problem()
    loss, traj = prob.evaluate(table3.params)
    return prob, loss, traj


# --- acceptance reporting ------------------------------------------------------------
# test_acceptance.py records one verdict per criterion; they are echoed in the
# terminal summary so that a plain `pytest -v` log carries the pass/fail table.

_VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
