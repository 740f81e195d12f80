import numpy as np
import pytest
from scipy.linalg import expm

from pekarlab.effective import optimal_phi
from pekarlab.froehlich import assemble_transformed_H
from pekarlab.model import ElectronState, HybridState, ModelConfig, PhononField, build_model
from pekarlab.operators import annihilation_op, kinetic_op, number_op, to_dense
from pekarlab.propagator import deviation, evolve, expm_krylov


def _hamiltonian(model):
    phi = optimal_phi(ElectronState.gaussian(model.grid, 1.5))
    return assemble_transformed_H(phi, model).H_total


def test_zero_time_is_identity(small_model, rng):
    s = HybridState.random(small_model, rng)
    assert evolve(_hamiltonian(small_model), s, 0.0) is s


def test_number_phase_exact(small_model):
    ordinal = small_model.basis.ordinal((1, 0, 1))
    fock = np.zeros(small_model.nf)
    fock[ordinal] = 1
    s = HybridState.product(small_model, ElectronState.gaussian(small_model.grid, 1.0), fock)
    out = evolve(number_op(small_model), s, 1.3)
    phase = np.exp(-1j * 2 / small_model.alpha**2 * 1.3)
    np.testing.assert_allclose(out.coeffs, phase * s.coeffs, atol=1e-13)


def test_kinetic_plane_wave_phase():
    model = build_model(ModelConfig(dim=1, L=8.0, M=16, mode_M=2, nmax=1))
    psi = ElectronState.plane_wave(model.grid, 1)
    s = HybridState.product(model, psi)
    out = evolve(kinetic_op(model), s, 1.0)
    k = 2 * np.pi / 8.0
    np.testing.assert_allclose(out.coeffs, np.exp(-1j * k**2) * s.coeffs, atol=1e-12)


@pytest.mark.parametrize("t", [0.3, 1.0, -2.0])
def test_krylov_matches_dense_expm(t):
    model = build_model(ModelConfig(dim=1, L=8.0, M=8, mode_M=4, nmax=3, alpha=2.0))
    assert model.dimension <= 500
    h = _hamiltonian(model)
    dense = to_dense(h, model)
    s = HybridState.random(model, np.random.default_rng(5))
    exact = expm(-1j * t * dense) @ s.coeffs.reshape(-1)
    out = evolve(h, s, t, tol=1e-12)
    assert np.max(np.abs(out.coeffs.reshape(-1) - exact)) <= 1e-10


def test_unitarity_and_time_reversal(small_model, rng):
    h = _hamiltonian(small_model)
    s = HybridState.random(small_model, rng)
    out, info = evolve(h, s, 3.0, return_info=True)
    assert abs(out.norm() - s.norm()) <= 1e-8
    assert abs(out.norm() - s.norm()) <= 10 * small_model.cfg.prop_tol * info.steps
    back = evolve(h, out, -3.0)
    assert (back - s).norm() <= 1e-8


def test_commuting_generators(small_model, rng):
    s = HybridState.random(small_model, rng)
    kin, num = kinetic_op(small_model), number_op(small_model)
    a = evolve(num, evolve(kin, s, 0.7), 0.7)
    b = evolve(kin, evolve(num, s, 0.7), 0.7)
    assert (a - b).norm() <= 1e-10


def test_happy_breakdown_is_exact():
    diag = np.array([1.0, 2.0, 3.0])
    v = np.array([1.0, 0, 0], dtype=complex)
    out, info = expm_krylov(lambda x: diag * x, v, 2.0, 1e-12)
    assert info.breakdowns == 1
    np.testing.assert_allclose(out, np.exp(-2j) * v, atol=1e-15)


def test_rejects_non_hermitian(small_model, rng):
    op = annihilation_op(np.ones(small_model.grid.n_modes), small_model)
    with pytest.raises(ValueError):
        evolve(op, HybridState.random(small_model, rng), 1.0)


def test_deviation_zero_at_t0_and_without_coupling():
    model = build_model(ModelConfig(dim=1, L=16.0, M=8, mode_M=4, nmax=2, coupling_form="zero"))
    psi = ElectronState.gaussian(model.grid, 2.0)
    phi = optimal_phi(psi)
    assert phi.norm_sq() == 0
    pts = deviation(4.0, phi, HybridState.product(model, psi), [0.0, 0.5, 1.0])
    assert pts[0].D == 0
    assert all(p.D <= model.cfg.prop_tol**2 for p in pts)


def test_deviation_warns_on_screening_failure(small_model):
    fock = np.zeros(small_model.nf)
    fock[-1] = 1.0
    psi = ElectronState.gaussian(small_model.grid, 2.0)
    s = HybridState.product(small_model, psi, fock)
    with pytest.warns(UserWarning):
        deviation(4.0, PhononField.zeros(small_model.grid), s, [0.0])


def test_deviation_unsorted_grid(small_model):
    psi = ElectronState.gaussian(small_model.grid, 2.0)
    with pytest.raises(ValueError):
        deviation(4.0, optimal_phi(psi), HybridState.product(small_model, psi), [1.0, 0.0])
