import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbsed.cli import bundled_config_path  # noqa: E402
from mbsed.config import load_config  # noqa: E402


@pytest.fixture(scope="session")
def nstc():
    """Operating point of the Ramsey studies (N=5, 3 uK)."""
    return load_config(bundled_config_path("nstc"), env={})


@pytest.fixture(scope="session")
def nstc_rabi():
    return load_config(bundled_config_path("nstc_rabi"), env={})


@pytest.fixture(scope="session")
def calib_cfg():
    """Calibration trap: 80 kHz, 450 Hz, 5 mrad, N=12 with m=1."""
    return load_config(bundled_config_path("calibration"), env={})


ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 12


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion as PASS/FAIL, print it, then assert it."""
    results = request.config.stash[ACCEPTANCE]

    def record(number: int, ok: bool, detail: str):
        results[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    results.setdefault("ran", True)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results.get("ran"):
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in results:
            ok, detail = results[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:2d}: FAIL  (not run or raised before a verdict)")
