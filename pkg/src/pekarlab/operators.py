"""Ladder operators with alpha-scaled CCR and the operators built from them.

Internally the Fock ladder is the standard one, ``b_j`` with
``[b_j, b_l^*] = delta_jl``; the physical operators are ``a_j = b_j / alpha``.
A field operator with profile ``f`` carries the quadrature factor ``sqrt(w)``
per mode so that ``||f||^2 = sum_j w |f_j|^2``::

    a(e^{ikx} f)  = sum_j sqrt(w) conj(f_j) e^{-i k_j x} a_j
    a*(e^{ikx} f) = sum_j sqrt(w) f_j e^{+i k_j x} a_j^*

Creation out of the top sector (total occupation nmax) is projected away,
so the truncated creation operator is exactly the adjoint of the truncated
annihilation operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from pekarlab.model import HybridState, Model, PhononField, number_diagonal


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatorHandle:
    apply: Callable[[HybridState], HybridState]
    hermitian: bool
    label: str
    adjoint_apply: Optional[Callable[[HybridState], HybridState]] = None

    def __call__(self, psi: HybridState) -> HybridState:
        return self.apply(psi)

    def adjoint(self, psi: HybridState) -> HybridState:
        if self.hermitian:
            return self.apply(psi)
        if self.adjoint_apply is None:
            raise NotImplementedError(f"{self.label} has no adjoint")
        return self.adjoint_apply(psi)

    def __add__(self, other: "OperatorHandle") -> "OperatorHandle":
        return op_sum([self, other])


def op_sum(ops, label: str | None = None, hermitian: bool | None = None) -> OperatorHandle:
    """Sum of handles; ``hermitian`` overrides the flag (e.g. for B + B*)."""
    ops = list(ops)
    label = label or " + ".join(op.label for op in ops)

    def apply(psi):
        out = ops[0](psi).coeffs.copy()
        for op in ops[1:]:
            out += op(psi).coeffs
        return HybridState(psi.model, out)

    if hermitian is None:
        hermitian = all(op.hermitian for op in ops)
    adjoint = None
    if not hermitian and all(op.hermitian or op.adjoint_apply is not None for op in ops):

        def adjoint(psi):
            out = ops[0].adjoint(psi).coeffs.copy()
            for op in ops[1:]:
                out += op.adjoint(psi).coeffs
            return HybridState(psi.model, out)

    return OperatorHandle(apply=apply, hermitian=hermitian, label=label, adjoint_apply=adjoint)


def to_dense(op: OperatorHandle, model: Model) -> np.ndarray:
    """Matrix of ``op`` in the (grid point, Fock ordinal) coefficient basis."""
    n = model.dimension
    if n > 6000:
        raise MemoryError(f"dense matrix of dimension {n} refused")
    out = np.empty((n, n), dtype=complex)
    for col in range(n):
        e = np.zeros(n, dtype=complex)
        e[col] = 1.0
        out[:, col] = op(HybridState(model, e)).coeffs.reshape(-1)
    return out


def profile(f, model: Model) -> np.ndarray:
    """Active-mode values of a PhononField or of a length-K array."""
    if isinstance(f, PhononField):
        return f.active
    arr = np.asarray(f, dtype=complex)
    if arr.shape == (len(model.grid.kpoints),):
        return arr[model.grid.active]
    if arr.shape != (model.grid.n_modes,):
        raise ValueError(f"profile must have {model.grid.n_modes} active-mode entries, got {arr.shape}")
    return arr


def profile_norm(f, model: Model) -> float:
    vals = profile(f, model)
    return math.sqrt(model.grid.weight * float(np.sum(np.abs(vals) ** 2)))


def _lower_sum(model: Model, coef: np.ndarray, psi: np.ndarray, phase: bool) -> np.ndarray:
    """sum_j coef_j [e^{-ik_j x}] b_j applied to raw coefficients."""
    out = np.zeros_like(psi)
    for j, (src, dst, fac) in enumerate(model.basis.lowering):
        c = coef[j]
        if c == 0 or src.size == 0:
            continue
        if phase:
            out[:, dst] += (c * model.phases[j])[:, None] * (psi[:, src] * fac)
        else:
            out[:, dst] += c * (psi[:, src] * fac)
    return out


def _raise_sum(model: Model, coef: np.ndarray, psi: np.ndarray, phase: bool) -> np.ndarray:
    """sum_j coef_j [e^{+ik_j x}] b_j^* with the top sector projected away."""
    out = np.zeros_like(psi)
    for j, (src, dst, fac) in enumerate(model.basis.lowering):
        c = coef[j]
        if c == 0 or src.size == 0:
            continue
        if phase:
            out[:, src] += (c * np.conj(model.phases[j]))[:, None] * (psi[:, dst] * fac)
        else:
            out[:, src] += c * (psi[:, dst] * fac)
    return out


def _field_coef(f, model: Model) -> np.ndarray:
    return math.sqrt(model.grid.weight) / model.alpha * profile(f, model)


def apply_annihilation_field(f, psi: HybridState, phase: bool = True) -> HybridState:
    """a(e^{ikx} f) psi; with ``phase=False`` the x-independent a(f)."""
    coef = np.conj(_field_coef(f, psi.model))
    return HybridState(psi.model, _lower_sum(psi.model, coef, psi.coeffs, phase))


def creation_overflow(f, psi: HybridState, phase: bool = True) -> float:
    """Norm of the part of a*(F) psi that leaves the truncated space.

    Uses ||a*(F) chi||^2 = ||a(F) chi||^2 + alpha^-2 ||f||^2 ||chi||^2 for the
    top-sector component chi, whose image lies entirely in sector nmax + 1.
    """
    model = psi.model
    top = np.where(model.top_mask[None, :], psi.coeffs, 0)
    chi = HybridState(model, top)
    lowered = apply_annihilation_field(f, chi, phase=phase)
    val = lowered.norm_sq() + profile_norm(f, model) ** 2 / model.alpha**2 * chi.norm_sq()
    return math.sqrt(max(val, 0.0))


def apply_creation_field(f, psi: HybridState, phase: bool = True, return_loss: bool = False):
    """a*(e^{ikx} f) psi projected onto the truncated space.

    With ``return_loss`` also returns the norm of the projected-away part.
    """
    coef = _field_coef(f, psi.model)
    out = HybridState(psi.model, _raise_sum(psi.model, coef, psi.coeffs, phase))
    if return_loss:
        return out, creation_overflow(f, psi, phase=phase)
    return out


def apply_mode_annihilation(j: int, psi: HybridState) -> HybridState:
    """a_j = b_j / alpha for a single active mode j."""
    coef = np.zeros(psi.model.grid.n_modes, dtype=complex)
    coef[j] = 1.0 / psi.model.alpha
    return HybridState(psi.model, _lower_sum(psi.model, coef, psi.coeffs, phase=False))


def apply_number(psi: HybridState) -> HybridState:
    return HybridState(psi.model, psi.coeffs * number_diagonal(psi.model)[None, :])


def apply_number_function(h: Callable[[np.ndarray], np.ndarray], psi: HybridState) -> HybridState:
    """h(N) psi for h defined on the spectrum alpha^-2 * {0, 1, ...}."""
    return HybridState(psi.model, psi.coeffs * h(number_diagonal(psi.model))[None, :])


def apply_kinetic(psi: HybridState) -> HybridState:
    return HybridState(psi.model, psi.model.grid.kinetic(psi.coeffs))


def apply_momentum(axis: int, psi: HybridState) -> HybridState:
    """p_axis = -i d/dx_axis, spectral."""
    grid = psi.model.grid
    q = grid.q[:, axis][:, None]
    return HybridState(psi.model, grid.ifft(q * grid.fft(psi.coeffs)))


def number_op(model: Model) -> OperatorHandle:
    return OperatorHandle(apply=apply_number, hermitian=True, label="N")


def kinetic_op(model: Model) -> OperatorHandle:
    return OperatorHandle(apply=apply_kinetic, hermitian=True, label="p^2")


def annihilation_op(f, model: Model, phase: bool = True, label: str = "a(F)") -> OperatorHandle:
    vals = profile(f, model)
    return OperatorHandle(
        apply=lambda psi: apply_annihilation_field(vals, psi, phase),
        hermitian=False,
        label=label,
        adjoint_apply=lambda psi: apply_creation_field(vals, psi, phase),
    )


def creation_op(f, model: Model, phase: bool = True, label: str = "a*(F)") -> OperatorHandle:
    vals = profile(f, model)
    return OperatorHandle(
        apply=lambda psi: apply_creation_field(vals, psi, phase),
        hermitian=False,
        label=label,
        adjoint_apply=lambda psi: apply_annihilation_field(vals, psi, phase),
    )


def field_sum_op(f, model: Model, phase: bool = True, label: str = "a(F)+a*(F)") -> OperatorHandle:
    vals = profile(f, model)

    def apply(psi):
        return HybridState(
            psi.model,
            apply_annihilation_field(vals, psi, phase).coeffs + apply_creation_field(vals, psi, phase).coeffs,
        )

    return OperatorHandle(apply=apply, hermitian=True, label=label)


def weyl_generator(f, model: Model) -> OperatorHandle:
    """Hermitian K = i (a*(f) - a(f)), so that exp(s (a*(f) - a(f))) = exp(-i K s)."""
    vals = profile(f, model)

    def apply(psi):
        diff = apply_creation_field(vals, psi, phase=False).coeffs - apply_annihilation_field(
            vals, psi, phase=False
        ).coeffs
        return HybridState(psi.model, 1j * diff)

    return OperatorHandle(apply=apply, hermitian=True, label="i(a*(f)-a(f))")


def apply_weyl(
    f,
    sign: int,
    psi: HybridState,
    tol: float | None = None,
    substeps: int = 8,
    return_loss: bool = False,
    max_loss: float = 1e-3,
):
    """W(f)^{sign} psi = exp(sign (a*(f) - a(f))) psi on the truncated space.

    The truncation loss bounds the distance to the untruncated image:
    ``||P W psi - W_trunc psi|| <= int_0^1 ||overflow(W_trunc(s) psi)|| ds``,
    accumulated over ``substeps`` with the larger endpoint value.
    """
    from pekarlab.propagator import evolve

    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    model = psi.model
    vals = profile(f, model)
    tol = model.cfg.prop_tol if tol is None else tol
    gen = weyl_generator(vals, model)
    ds = 1.0 / substeps
    cur = psi
    prev = creation_overflow(vals, cur, phase=False)
    loss = 0.0
    for _ in range(substeps):
        cur = evolve(gen, cur, sign * ds, tol=tol)
        now = creation_overflow(vals, cur, phase=False)
        loss += ds * max(prev, now)
        prev = now
    if loss > max_loss:
        raise TruncationError(f"Weyl truncation loss {loss:.3e} exceeds {max_loss:.1e}")
    if return_loss:
        return cur, loss
    return cur


def coherent_state_error(f, model: Model, tol: float = 1e-13) -> float:
    """max_j ||a_j W(f) Omega - alpha^-2 sqrt(w) f_j W(f) Omega|| / ||alpha^-2 sqrt(w) f_j W(f) Omega||.

    The electron factor is the normalized constant function; the error is
    pure Fock truncation (W(f) Omega is an exact a_j eigenvector before truncation).
    """
    vals = profile(f, model)
    psi = np.zeros((model.nx, model.nf), dtype=complex)
    psi[:, 0] = 1.0 / math.sqrt(model.nx * model.grid.cell)
    chi = apply_weyl(vals, 1, HybridState(model, psi), tol=tol, max_loss=np.inf)
    worst = 0.0
    for j in range(model.grid.n_modes):
        eig = math.sqrt(model.grid.weight) * vals[j] / model.alpha**2
        if eig == 0:
            continue
        diff = apply_mode_annihilation(j, chi) - chi * eig
        worst = max(worst, diff.norm() / (abs(eig) * chi.norm()))
    return worst
