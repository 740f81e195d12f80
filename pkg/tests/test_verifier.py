import csv
import io
import json

import numpy as np
import pytest

from pekarlab.model import ModelConfig, build_model
from pekarlab.verifier import CSV_COLUMNS, tail_constant, run_all

CFG = ModelConfig(dim=1, L=16.0, M=8, mode_M=4, nmax=2, alpha=4.0)
FAST = dict(samples=40, n_times=6)


@pytest.fixture(scope="module")
def table():
    return run_all(CFG, **FAST)


def test_default_table_passes(table):
    assert table.ok
    positives = [r for r in table.rows if not r.negative]
    assert all(r.passed and r.slack >= 0 for r in positives)


def test_negative_controls_fail(table):
    negatives = [r for r in table.rows if r.negative]
    assert {r.check_id for r in negatives} == {"neg.ladder.annihilation", "neg.numberform", "neg.kineticform"}
    assert not any(r.passed for r in negatives)


def test_expected_rows_present(table):
    ids = {r.check_id for r in table.rows}
    for name in [
        "ladder.annihilation", "ladder.creation", "ladder.number_annihilation", "ladder.number_creation", "inter.a.id", "inter.astar.sqrt", "ccr",
        "sobolev", "numberform.eps1", "numberform.eps0.25", "kineticform.eps1", "kineticform.eps0.25",
        "tail.B", "tail.B_number", "pekar.identity", "energy.effective", "energy.full", "hphiform.lower.eps0.5", "hdecomp",
    ]:
        assert name in ids


def test_csv_format(table):
    text = table.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == len(table.rows) + 1
    for row in rows[1:]:
        json.loads(row[1])
        assert row[5] in ("true", "false")


def test_deterministic(table):
    again = run_all(CFG, **FAST)
    assert again.to_csv() == table.to_csv()


def test_group_selection_keeps_rows_identical(table):
    part = run_all(CFG, groups=["sobolev"], **FAST)
    assert part.rows == [table.by_id("sobolev")]


def test_zero_coupling_measures_zero():
    tab = run_all(CFG.replace(coupling_form="zero"), groups=["ladder", "sobolev", "tail"], **FAST)
    for r in tab.rows:
        if not r.negative:
            assert r.measured == 0 and r.passed
    assert tab.ok


def test_dense_overflow_fails_row_only():
    tab = run_all(CFG, groups=["numberform", "ccr"], dense_limit=10, **FAST)
    row = tab.by_id("numberform.eps1")
    assert not row.passed and "dense" in row.params["reason"]
    assert tab.by_id("ccr").passed


def test_tail_constant_oracle():
    # direct maximum over electron momenta with explicit wrapping
    model = build_model(CFG)
    grid = model.grid
    lam = 0.5 * grid.k_radius
    best = 0.0
    for n_q in range(-grid.M // 2, grid.M // 2):
        total = 0.0
        for k, v in zip(grid.k_active[:, 0], grid.coupling):
            if abs(k) <= lam:
                continue
            m = int(round((n_q * 2 * np.pi / grid.L + k) * grid.L / (2 * np.pi)))
            m = (m + grid.M // 2) % grid.M - grid.M // 2
            total += grid.weight * v**2 / (1 + (2 * np.pi * m / grid.L) ** 2)
        best = max(best, total)
    assert tail_constant(model, lam) == pytest.approx(best, rel=1e-14)
