import numpy as np
import pytest

from pekarlab.model import ModelConfig, build_model


@pytest.fixture
def small_cfg():
    return ModelConfig(dim=1, L=16.0, M=8, mode_M=4, nmax=2, alpha=4.0)


@pytest.fixture
def small_model(small_cfg):
    return build_model(small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
