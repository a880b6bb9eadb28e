import json
from pathlib import Path

import pytest

from awlslab.grid import load_case

CASES = Path(__file__).resolve().parent.parent / "cases"
GOLDEN = Path(__file__).resolve().parent / "golden"


def _case(name):
    return load_case(CASES / f"{name}.case")


@pytest.fixture(scope="session")
def case2():
    return _case("case2")


@pytest.fixture(scope="session")
def case3ring():
    return _case("case3ring")


@pytest.fixture(scope="session")
def case5():
    return _case("case5")


@pytest.fixture(scope="session")
def case14():
    return _case("case14")


@pytest.fixture(scope="session")
def synth118():
    return _case("synth118")


@pytest.fixture(scope="session")
def lines14():
    doc = json.loads((CASES / "candidates_case14_8.json").read_text())
    return [int(x) for x in doc["lines"]]


@pytest.fixture(scope="session")
def lines118():
    doc = json.loads((CASES / "candidates_synth118_15.json").read_text())
    return [int(x) for x in doc["lines"]]
