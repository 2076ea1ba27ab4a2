import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from photonic_nas.data import find_digits, load_digits, split_and_subset  # noqa: E402
from photonic_nas.genome import GeneTable  # noqa: E402


@pytest.fixture(scope="session")
def digits():
    path = find_digits()
    if path is None:
        pytest.skip("Digits data not available")
    return load_digits(path)


@pytest.fixture(scope="session")
def digits_split(digits):
    return split_and_subset(digits, 0.2, 1000, seed=0)


@pytest.fixture(scope="session")
def table():
    return GeneTable.load()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj))
    return path


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")
