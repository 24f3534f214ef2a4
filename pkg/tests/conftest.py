import json
import time
from pathlib import Path

import numpy as np
import pytest

from contxt.models.mlp import MlpTrainConfig, train_mlp
from contxt.synth_data.domain_shift import DomainShiftConfig, gen_domain_shift

FIXTURE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "fixture.json"

_acceptance_lines: list[tuple[int, str]] = []


@pytest.fixture(scope="session")
def shift_data():
    return gen_domain_shift(DomainShiftConfig(seed=0))


@pytest.fixture(scope="session")
def small_mlp(shift_data):
    return train_mlp(shift_data.train.X, shift_data.train.y, MlpTrainConfig(hidden=(64, 64, 64), epochs=10, seed=0),
                     n_classes=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_runs(tmp_path_factory):
    """Two full pipeline runs of the fixture config into separate directories."""
    from contxt.cli import main

    root = tmp_path_factory.mktemp("fixture")
    runs = {}
    for name in ("a", "b"):
        out = root / name
        start = time.perf_counter()
        code = main(["pipeline", "--config", str(FIXTURE_CONFIG), "--out", str(out)])
        runs[name] = {"dir": out, "seconds": time.perf_counter() - start, "code": code}
    return runs


@pytest.fixture(scope="session")
def fixture_config():
    return json.loads(FIXTURE_CONFIG.read_text())


@pytest.fixture
def accept():
    def record(n: int, ok: bool, detail: str) -> None:
        line = f"[acceptance {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance_lines.append((n, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
