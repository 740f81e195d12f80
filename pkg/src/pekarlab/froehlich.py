"""Weyl-transformed Froehlich Hamiltonian and its decomposition.

    H = H_phi + N + a(phi) + a*(phi) + sum_j sqrt(w) v_j (e^{-ik_j x} a_j + e^{ik_j x} a_j^*)
      = H_phi + A + B + B*

with B the annihilation half of the interaction restricted to |k_j| > lambda_cut.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from pekarlab.effective import assemble_H_phi
from pekarlab.model import BudgetError, HybridState, Model, ModelConfig, PhononField, build_model
from pekarlab.operators import (
    OperatorHandle,
    annihilation_op,
    apply_annihilation_field,
    apply_creation_field,
    apply_kinetic,
    apply_number,
    apply_weyl,
    creation_op,
    number_op,
    op_sum,
    to_dense,
)


def resolve_lambda(model: Model) -> float:
    lam = model.cfg.lambda_cut
    return lam if lam > 0 else 0.5 * model.grid.k_radius


def tail_mask(model: Model, lambda_cut: float | None = None) -> np.ndarray:
    lam = resolve_lambda(model) if lambda_cut is None else lambda_cut
    return model.grid.knorm > lam


@dataclass(frozen=True, eq=False)
class HDecomposition:
    H_phi: OperatorHandle
    N_op: OperatorHandle
    A_tilde: OperatorHandle
    B: OperatorHandle
    B_star: OperatorHandle
    H_total: OperatorHandle
    lambda_cut: float
    # epsilon solving 4 eps^-1 ||v |k|^-1 chi_{|k|>Lambda}||^2 = eps on this grid
    tail_epsilon: float


def _as_model(cfg) -> Model:
    return cfg if isinstance(cfg, Model) else build_model(cfg)


def interaction_profile(model: Model) -> np.ndarray:
    return model.grid.coupling.astype(complex)


def assemble_transformed_H(phi: PhononField, cfg: Model | ModelConfig) -> HDecomposition:
    model = _as_model(cfg)
    lam = resolve_lambda(model)
    if not lam > 0:
        raise ValueError("lambda_cut must be positive")
    tail = tail_mask(model, lam)
    if not tail.any():
        warnings.warn(f"lambda_cut={lam} exceeds the mode radius; B is empty")
    v = interaction_profile(model)
    v_hi = np.where(tail, v, 0)
    v_lo = np.where(tail, 0, v)
    phivals = phi.active

    def a_tilde(psi: HybridState) -> HybridState:
        out = apply_annihilation_field(phivals, psi, phase=False).coeffs.copy()
        out += apply_creation_field(phivals, psi, phase=False).coeffs
        out += apply_annihilation_field(v_lo, psi).coeffs
        out += apply_creation_field(v_lo, psi).coeffs
        return HybridState(psi.model, out)

    h_phi = assemble_H_phi(phi)
    n_op = number_op(model)
    a_op = OperatorHandle(apply=a_tilde, hermitian=True, label="A-N")
    b_op = annihilation_op(v_hi, model, label="B")
    bs_op = creation_op(v_hi, model, label="B*")
    total = op_sum([h_phi, n_op, a_op, b_op, bs_op], label="H", hermitian=True)
    tail_sq = model.grid.weight * float(np.sum(np.abs(v_hi / model.grid.knorm) ** 2))
    return HDecomposition(
        H_phi=h_phi,
        N_op=n_op,
        A_tilde=a_op,
        B=b_op,
        B_star=bs_op,
        H_total=total,
        lambda_cut=lam,
        tail_epsilon=2.0 * math.sqrt(tail_sq),
    )


def assemble_froehlich(cfg: Model | ModelConfig) -> OperatorHandle:
    """Untransformed H^F = p^2 + interaction + N."""
    model = _as_model(cfg)
    v = interaction_profile(model)

    def apply(psi: HybridState) -> HybridState:
        out = apply_kinetic(psi).coeffs.copy()
        out += apply_number(psi).coeffs
        out += apply_annihilation_field(v, psi).coeffs
        out += apply_creation_field(v, psi).coeffs
        return HybridState(psi.model, out)

    return OperatorHandle(apply=apply, hermitian=True, label="H^F")


@dataclass(frozen=True)
class ConjugationReport:
    deviation: float
    truncation_loss: float
    dimension: int
    compared_max_occupation: int


def weyl_fock_matrix(f, model: Model, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Truncated W(f) on the Fock factor (nf x nf) and the per-column loss."""
    nf = model.nf
    wmat = np.empty((nf, nf), dtype=complex)
    losses = np.empty(nf)
    for s in range(nf):
        e = np.zeros((model.nx, nf), dtype=complex)
        e[0, s] = 1.0
        out, loss = apply_weyl(f, 1, HybridState(model, e), tol=tol, return_loss=True, max_loss=np.inf)
        wmat[:, s] = out.coeffs[0]
        losses[s] = loss
    return wmat, losses


def conjugation_check(
    phi: PhononField,
    cfg: Model | ModelConfig,
    compare_max_occupation: int | None = None,
    dense_limit: int = 3000,
) -> ConjugationReport:
    """Compare W*(alpha^2 phi) H^F W(alpha^2 phi) with the transformed H densely.

    Entries are compared on the block of Fock ordinals with total occupation
    <= ``compare_max_occupation`` (default nmax // 2); the reported loss is the
    largest Weyl truncation loss over that block.
    """
    model = _as_model(cfg)
    if model.dimension > dense_limit:
        raise BudgetError(model.dimension, dense_limit)
    nmax = model.cfg.nmax
    n_cmp = nmax // 2 if compare_max_occupation is None else compare_max_occupation
    f = model.alpha**2 * phi.active
    w_fock, losses = weyl_fock_matrix(f, model)
    w_full = np.kron(np.eye(model.nx), w_fock)
    hf = to_dense(assemble_froehlich(model), model)
    ht = to_dense(assemble_transformed_H(phi, model).H_total, model)
    conj = w_full.conj().T @ hf @ w_full
    fock_ok = model.basis.totals <= n_cmp
    block = np.tile(fock_ok, model.nx)
    dev = float(np.max(np.abs((conj - ht)[np.ix_(block, block)])))
    return ConjugationReport(
        deviation=dev,
        truncation_loss=float(losses[fock_ok].max()),
        dimension=model.dimension,
        compared_max_occupation=n_cmp,
    )
