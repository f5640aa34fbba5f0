import json
import time
from collections import defaultdict

import pytest

from pdap.cli import run_compare, solve_to_dir
from pdap.experiment import ExperimentConfig

# criterion number -> list of (part, passed, detail)
_CRITERIA: dict[int, list] = defaultdict(list)
_N_CRITERIA = 11


@pytest.fixture(scope="session")
def criterion():
    """Record one part of an acceptance criterion; the terminal summary prints one line per criterion."""

    def record(number: int, part: str, passed: bool, detail: str = ""):
        _CRITERIA[number].append((part, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, _N_CRITERIA + 1):
        parts = _CRITERIA.get(n)
        if not parts:
            terminalreporter.write_line(f"CRITERION {n}: NOT RUN")
            continue
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name} {'ok' if p else 'FAILED'} ({d})" if d else f"{name} {'ok' if p else 'FAILED'}"
                           for name, p, d in parts)
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def default_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def compare_run(tmp_path_factory, default_config):
    """The full method comparison on the default experiment (all methods, one shared reference)."""
    out = tmp_path_factory.mktemp("compare")
    t0 = time.perf_counter()
    outcome = run_compare(default_config, out, no_timing=True)
    elapsed = time.perf_counter() - t0
    return {"outcome": outcome, "dir": out, "seconds": elapsed,
            "report": json.loads((out / "comparison.json").read_text())}


@pytest.fixture(scope="session")
def pdap_run(tmp_path_factory, default_config):
    """A standalone PDAP solve with the default configuration, timed."""
    out = tmp_path_factory.mktemp("pdap")
    solver = dict(default_config.solvers["pdap"], record_timing=False)
    t0 = time.perf_counter()
    result = solve_to_dir(default_config, solver, out, keep_iterates=True)
    return {"result": result, "dir": out, "seconds": time.perf_counter() - t0}
