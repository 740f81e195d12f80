import numpy as np
import pytest

from pekarlab.effective import optimal_phi, pekar_energy
from pekarlab.froehlich import (
    assemble_froehlich,
    assemble_transformed_H,
    conjugation_check,
    resolve_lambda,
    tail_mask,
)
from pekarlab.model import ElectronState, HybridState, ModelConfig, PhononField, build_model, inner
from pekarlab.operators import to_dense


def test_default_lambda_is_half_radius(small_model):
    assert resolve_lambda(small_model) == pytest.approx(0.5 * small_model.grid.k_radius)
    custom = build_model(small_model.cfg.replace(lambda_cut=0.3))
    assert resolve_lambda(custom) == 0.3
    assert tail_mask(custom).sum() == np.sum(custom.grid.knorm > 0.3)


def test_decomposition_sums_to_total(small_model, rng):
    phi = PhononField.from_active(small_model.grid, 0.2 * rng.standard_normal(small_model.grid.n_modes))
    dec = assemble_transformed_H(phi, small_model)
    s = HybridState.random(small_model, rng)
    parts = dec.H_phi(s) + dec.N_op(s) + dec.A_tilde(s) + dec.B(s) + dec.B_star(s)
    np.testing.assert_allclose(dec.H_total(s).coeffs, parts.coeffs, atol=1e-12)


def test_transformed_h_is_hermitian(small_model, rng):
    phi = optimal_phi(ElectronState.gaussian(small_model.grid, 2.0))
    h = to_dense(assemble_transformed_H(phi, small_model).H_total, small_model)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-12)


def test_b_star_is_adjoint_of_b(small_model, rng):
    dec = assemble_transformed_H(PhononField.zeros(small_model.grid), small_model)
    a, b = HybridState.random(small_model, rng), HybridState.random(small_model, rng)
    assert inner(dec.B_star(a), b) == pytest.approx(inner(a, dec.B(b)), abs=1e-13)


def test_tail_epsilon_solves_balance(small_model):
    dec = assemble_transformed_H(PhononField.zeros(small_model.grid), small_model)
    grid = small_model.grid
    mask = tail_mask(small_model)
    tail = grid.weight * np.sum((grid.coupling[mask] / grid.knorm[mask]) ** 2)
    eps = dec.tail_epsilon
    assert 4 * tail / eps == pytest.approx(eps)


def test_pekar_identity_on_products(small_model, rng):
    grid = small_model.grid
    for _ in range(10):
        psi = ElectronState.random(grid, rng)
        phi = PhononField.from_active(grid, rng.standard_normal(grid.n_modes) + 1j * rng.standard_normal(grid.n_modes))
        prod = HybridState.product(small_model, psi)
        h = assemble_transformed_H(phi, small_model).H_total
        assert abs(inner(prod, h(prod)).real - pekar_energy(psi, phi)) <= 1e-12


def test_froehlich_untransformed_is_hermitian(small_model):
    h = to_dense(assemble_froehlich(small_model), small_model)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-12)


def test_conjugation_single_mode():
    cfg = ModelConfig(dim=1, L=8.0, M=4, mode_M=2, nmax=10, alpha=2.0)
    model = build_model(cfg)
    phi = PhononField.from_active(model.grid, np.array([0.05 + 0.02j]))
    rep = conjugation_check(phi, model)
    assert rep.deviation <= 10 * rep.truncation_loss
    assert rep.deviation < 1e-8
