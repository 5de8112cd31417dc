import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_criterion(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[num] = (ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}")
