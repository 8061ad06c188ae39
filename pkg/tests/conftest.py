import os
import time
from pathlib import Path
from types import SimpleNamespace

import pytest
import yaml

from segnoise.cli.main import main
from segnoise.core import load_utility
from segnoise.unoise import load_noise_model

ACCEPTANCE_LINES: list[str] = []

# set to a directory holding a finished `train` run to skip retraining
REUSE_ENV = "SEGNOISE_TEST_RUN_DIR"


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str, seconds: float) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail} ({seconds:.1f}s)"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """The default configuration trained once through the CLI."""
    reuse = os.environ.get(REUSE_ENV)
    if reuse:
        out = Path(reuse)
        cfg_path = out / "config.yaml"
        code, seconds = 0, float(yaml.safe_load((out / "train_seconds.yaml").read_text()))
    else:
        out = tmp_path_factory.mktemp("trained")
        cfg_path = out / "config.yaml"
        cfg_path.write_text(yaml.safe_dump({"output_dir": str(out)}))
        t0 = time.perf_counter()
        code = main(["train", "-c", str(cfg_path)])
        seconds = time.perf_counter() - t0
        (out / "train_seconds.yaml").write_text(repr(seconds))
    assert code == 0, "default training run failed"
    return SimpleNamespace(
        out=out,
        config=cfg_path,
        train_seconds=seconds,
        utility=load_utility(out / "models" / "utility.pt"),
        noise=load_noise_model(out / "models" / "noise.pt"),
    )
