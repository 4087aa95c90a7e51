import os

import numpy as np
import pytest

from cct import data as D

ACCEPTANCE_RESULTS = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_RESULTS:
        status = {True: "PASS", False: "FAIL", None: "BLOCKED"}[passed]
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")


def bloodmnist_path():
    candidates = [os.environ.get("CCT_BLOODMNIST", ""), "bloodmnist.npz",
                  os.path.expanduser("~/.medmnist/bloodmnist.npz")]
    return next((p for p in candidates if p and os.path.isfile(p)), None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_npz(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synthetic.npz"
    D.write_synthetic_archive(path, sizes=(256, 32, 96), seed=3)
    return str(path)
