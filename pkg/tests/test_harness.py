import dataclasses
import math

import numpy as np
import pytest

from pekarlab.harness import (
    ExperimentConfig,
    InsufficientData,
    RECORD_COLUMNS,
    SweepRecord,
    collapse_table,
    default_experiment,
    envelope_holds,
    fit_growth,
    fit_report,
    initial_state,
    records_from_csv,
    records_to_csv,
    run_experiment,
    run_sweep,
)
from pekarlab.model import ConfigError, ElectronState, apriori_constants, build_model

# alpha^2 D(t) of the default sweep, t = 0, 0.1, ..., 1
PINNED_COLLAPSE = {
    2.0: [0.0, 0.0177789412, 0.06890779828, 0.1469949047, 0.2426641964, 0.3461952614,
          0.4503653856, 0.5513415726, 0.6475034405, 0.7383329106, 0.8246018537],
    4.0: [0.0, 0.01781729158, 0.06949457798, 0.1497343942, 0.2503418119, 0.3623020801,
          0.478799915, 0.5970174748, 0.7172501028, 0.8406366483, 0.968137568],
    8.0: [0.0, 0.01782673493, 0.06963988197, 0.1504188665, 0.2522812559, 0.3664149898,
          0.4861272748, 0.6089007844, 0.7356732382, 0.8682888521, 1.007982088],
}


def synthetic(alphas, times, amp=1.0, rate=1.0, noise=0.0, rng=None):
    recs = []
    for a in alphas:
        for t in times:
            d = amp / a**2 * math.expm1(rate * t)
            if noise and t > 0:
                d *= 1 + noise * rng.standard_normal()
            recs.append(SweepRecord(a, t, d, 1.0, 0.0, 0.0, 0.0, False))
    return recs


@pytest.fixture(scope="module")
def default_records():
    return run_experiment(default_experiment())


def test_fit_recovers_synthetic_envelope():
    rep = fit_report(synthetic([2.0, 4.0, 8.0], np.linspace(0, 1, 11)))
    assert rep.alpha_scaling_slope == pytest.approx(-2.0, abs=1e-6)
    assert rep.growth_C == pytest.approx(1.0, abs=1e-6)
    assert rep.growth_c * 16 == pytest.approx(1.0, abs=1e-6)
    assert rep.rel_rms < 1e-6


def test_fit_under_noise():
    rng = np.random.default_rng(0)
    slopes = [
        fit_report(synthetic([2.0, 4.0, 8.0], np.linspace(0, 1, 11), noise=0.01, rng=rng)).alpha_scaling_slope
        for _ in range(200)
    ]
    assert np.all(np.abs(np.array(slopes) + 2.0) <= 0.05)


def test_growth_fit_multistart_finds_fast_rate():
    t = np.linspace(0, 1, 11)
    c, big_c, res = fit_growth(t, 0.01 * np.expm1(3.5 * t))
    assert big_c == pytest.approx(3.5, rel=1e-8)
    assert c == pytest.approx(0.01, rel=1e-8)


def test_envelope_monotone_in_prefactor(default_records):
    rep = fit_report(default_records)
    assert rep.envelope_ok
    for pre in (2.0, 2.5, 4.0, 100.0):
        assert envelope_holds(default_records, rep.growth_C, pre)
    # a tiny prefactor must fail
    assert not envelope_holds(default_records, rep.growth_C, 1e-3)


def test_insufficient_unflagged_rows():
    recs = synthetic([2.0, 4.0], np.linspace(0, 1, 6))
    with pytest.raises(InsufficientData):
        fit_report(recs)
    flagged = [dataclasses.replace(r, flagged=True) for r in synthetic([2.0, 4.0, 8.0], np.linspace(0, 1, 6))]
    with pytest.raises(InsufficientData):
        fit_report(flagged)


def test_single_point_sweep():
    cfg = default_experiment().model
    recs = run_sweep(cfg, [3.0], [0.0])
    assert len(recs) == 1 and recs[0].D == 0.0


def test_zero_coupling_sweep():
    cfg = default_experiment().model.replace(coupling_form="zero")
    recs = run_sweep(cfg, [2.0, 4.0], np.linspace(0, 1, 5))
    assert all(r.D <= cfg.prop_tol**2 for r in recs)


def test_pinned_collapse(default_records):
    table = collapse_table(default_records)
    for a, vals in PINNED_COLLAPSE.items():
        got = [v for _, v in table[a]]
        np.testing.assert_allclose(got, vals, rtol=1e-8, atol=1e-14)
    ref = np.array(PINNED_COLLAPSE[4.0][1:])
    for a in (2.0, 8.0):
        assert np.max(np.abs(np.array(PINNED_COLLAPSE[a][1:]) / ref - 1)) <= 0.2


def test_records_sorted_and_valid(default_records):
    keys = [(r.alpha, r.t) for r in default_records]
    assert keys == sorted(keys)
    assert all(r.D >= 0 and 0 <= r.top_sector_mass <= 1 for r in default_records)


def test_worker_pool_matches_serial(default_records):
    exp = dataclasses.replace(default_experiment(), workers=3)
    assert records_to_csv(run_experiment(exp)) == records_to_csv(default_records)


def test_csv_roundtrip(default_records):
    text = records_to_csv(default_records)
    assert text.splitlines()[0] == ",".join(RECORD_COLUMNS)
    assert records_from_csv(text) == default_records


def test_perturbed_product_passes_screening():
    model = build_model(default_experiment().model)
    psi = ElectronState.gaussian(model.grid, 2.0)
    state = initial_state(model, psi, "perturbed-product")
    m1, m2 = apriori_constants(state)
    assert state.norm() == pytest.approx(1.0)
    assert 0 < m2 <= m1 / model.alpha**2
    assert state.sector_masses()[1] > 0


def test_perturbed_sweep_runs():
    exp = dataclasses.replace(default_experiment(), initial="perturbed-product", n_times=6)
    recs = run_experiment(exp)
    assert recs[0].D == 0
    assert all(not r.flagged for r in recs if r.alpha > 2)


def test_experiment_config_text():
    exp = default_experiment()
    assert ExperimentConfig.from_text(exp.to_text()) == exp
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("alphas = 2 4\nalpha0 = 3\n")
    assert err.value.line == 1
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_text("M = 8\nalphas = 2 x\n")
    assert err.value.line == 2
