import json
from pathlib import Path

import numpy as np
import pytest

from polarbp.polar import construct_code

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def code64():
    return construct_code(64, 32, 0.0)


@pytest.fixture(scope="session")
def code8():
    return construct_code(8, 4, 0.0)


@pytest.fixture(scope="session")
def golden64():
    return json.loads((FIXTURES / "code_64_32_0dB.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
