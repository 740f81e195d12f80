import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pekarlab.model import (
    BudgetError,
    ConfigError,
    ElectronState,
    FockBasis,
    HybridState,
    ModelConfig,
    PhononField,
    apriori_constants,
    build_mode_grid,
    build_model,
    fock_dimension,
    h1_norm,
    inner,
    number_diagonal,
)


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"M": 7}, "M"),
        ({"nmax": 0}, "nmax"),
        ({"alpha": 0.5, "alpha0": 1.0}, "alpha"),
        ({"L": -1.0}, "L"),
        ({"prop_tol": 1e-3}, "prop_tol"),
        ({"dim": 4}, "dim"),
        ({"mode_M": 3}, "mode_M"),
        ({"coupling_form": "gauss"}, "coupling_form"),
    ],
)
def test_invalid_config_rejected(changes, key):
    with pytest.raises(ConfigError) as err:
        ModelConfig(**changes)
    assert err.value.key == key


def test_config_text_roundtrip():
    cfg = ModelConfig(dim=3, L=5.5, M=4, nmax=1, alpha=3.0, coupling_form="unit", seed=7)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as err:
        ModelConfig.from_text("# comment\nM = 8\nnmax = two\n")
    assert err.value.line == 3
    with pytest.raises(ConfigError) as err:
        ModelConfig.from_text("M = 8\n\nbogus = 1\n")
    assert err.value.line == 3
    with pytest.raises(ConfigError) as err:
        ModelConfig.from_text("dim = 1\nM = 9\n")
    assert err.value.line == 2
    with pytest.raises(ConfigError) as err:
        ModelConfig.from_text("M = 8\nM = 6\n")
    assert err.value.line == 2


def test_mode_grid_excludes_zero_mode():
    grid = build_mode_grid(ModelConfig(dim=1, L=8.0, M=8, mode_M=4))
    assert grid.n_modes == 3
    assert np.all(grid.knorm > 0)
    np.testing.assert_allclose(np.sort(grid.k_active[:, 0]), 2 * np.pi / 8 * np.array([-2, -1, 1]))
    assert grid.weight == pytest.approx(2 * np.pi / 8)
    grid3 = build_mode_grid(ModelConfig(dim=3, L=8.0, M=4, nmax=1))
    assert grid3.n_modes == 63
    assert grid3.nx == 64


def test_fock_basis_order_and_size():
    basis = FockBasis.build(3, 2)
    assert len(basis) == fock_dimension(3, 2) == 10
    assert basis.occupation(0) == (0, 0, 0)
    assert list(basis.totals) == sorted(basis.totals)
    block = [basis.occupation(i) for i in range(len(basis)) if basis.totals[i] == 1]
    assert block == sorted(block)


def test_budget_error_reports_dimension():
    cfg = ModelConfig(dim=1, L=8.0, M=64, nmax=5, max_hybrid_dim=1000)
    with pytest.raises(BudgetError) as err:
        build_model(cfg)
    assert err.value.dimension == 64 * fock_dimension(63, 5)


def test_phonon_zero_mode_forced_to_zero(small_model):
    grid = small_model.grid
    amps = np.ones(len(grid.kpoints), dtype=complex)
    phi = PhononField(grid, amps)
    assert phi.amps[grid.zero_index] == 0
    assert phi.norm_sq() == pytest.approx(grid.weight * grid.n_modes)


def test_product_inner_equals_electron_inner(small_model, rng):
    grid = small_model.grid
    a, b = ElectronState.random(grid, rng), ElectronState.random(grid, rng)
    lhs = inner(HybridState.product(small_model, a), HybridState.product(small_model, b))
    assert lhs == pytest.approx(a.inner(b), abs=1e-14)


def test_orthogonal_sectors(small_model):
    fock0 = np.zeros(small_model.nf)
    fock0[0] = 1
    fock1 = np.zeros(small_model.nf)
    fock1[1] = 1
    psi = ElectronState.gaussian(small_model.grid, 1.0)
    assert inner(HybridState.product(small_model, psi, fock0), HybridState.product(small_model, psi, fock1)) == 0


def test_states_are_immutable(small_model, rng):
    state = HybridState.random(small_model, rng)
    with pytest.raises(ValueError):
        state.coeffs[0, 0] = 1.0


def test_h1_norm_plane_wave():
    grid = build_mode_grid(ModelConfig(dim=1, L=8.0, M=16))
    for n in (0, 1, 3, -5):
        k = 2 * np.pi * n / 8.0
        assert h1_norm(ElectronState.plane_wave(grid, n)) == pytest.approx(math.sqrt(1 + k**2), rel=1e-13)


def test_sector_masses_and_number(small_model, rng):
    state = HybridState.random(small_model, rng)
    masses = state.sector_masses()
    assert masses.sum() == pytest.approx(1.0)
    nvals = number_diagonal(small_model)
    expect = sum(m * n / small_model.alpha**2 for n, m in enumerate(masses))
    weighted = small_model.grid.cell * np.sum(nvals * np.sum(np.abs(state.coeffs) ** 2, axis=0))
    assert weighted == pytest.approx(expect)


def test_apriori_constants_vacuum_product(small_model):
    psi = ElectronState.gaussian(small_model.grid, 2.0)
    m1, m2 = apriori_constants(HybridState.product(small_model, psi))
    assert m1 == pytest.approx(h1_norm(psi))
    assert m2 == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10))
def test_norm_homogeneity(seed, scale):
    model = build_model(ModelConfig(dim=1, L=8.0, M=4, nmax=2))
    state = HybridState.random(model, np.random.default_rng(seed))
    assert (state * scale).norm() == pytest.approx(scale * state.norm(), rel=1e-13)
    assert inner(state, state).real == pytest.approx(state.norm_sq(), rel=1e-13)
