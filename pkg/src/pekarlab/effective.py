"""Effective potential V_phi, the electron operator H_phi and the Pekar functional.

Fourier convention: rho_hat(k) = sum_m h^dim e^{-i k.x_m} rho(x_m), and

    V_phi(x) = sum_j w v(k_j) (e^{-i k_j.x} phi_j + e^{i k_j.x} conj(phi_j)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pekarlab.model import ElectronState, HybridState, ModelConfig, ModeGrid, PhononField, build_mode_grid
from pekarlab.operators import OperatorHandle

NORM_TOL = 1e-10


class PekarDivergence(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EffectivePotential:
    values: np.ndarray
    phi_norm_sq: float


def build_potential(phi: PhononField) -> EffectivePotential:
    grid = phi.grid
    spec = np.zeros(grid.nx, dtype=complex)
    spec[grid.fft_index] = grid.weight * grid.coupling * phi.active
    values = 2.0 * grid.fft(spec).real
    values.flags.writeable = False
    return EffectivePotential(values=values, phi_norm_sq=phi.norm_sq())


def apply_h_phi_array(pot: EffectivePotential, grid: ModeGrid, arr: np.ndarray) -> np.ndarray:
    """(p^2 + V_phi + ||phi||^2) on the leading (spatial) axis of ``arr``."""
    v = pot.values.reshape((grid.nx,) + (1,) * (arr.ndim - 1))
    return grid.kinetic(arr) + (v + pot.phi_norm_sq) * arr


def assemble_H_phi(phi: PhononField) -> OperatorHandle:
    """H_phi as a Hermitian handle on hybrid states (identity on the Fock factor)."""
    pot = build_potential(phi)
    grid = phi.grid

    def apply(psi: HybridState) -> HybridState:
        return HybridState(psi.model, apply_h_phi_array(pot, grid, psi.coeffs))

    return OperatorHandle(apply=apply, hermitian=True, label="H_phi")


def h_phi_matrix(phi: PhononField) -> np.ndarray:
    """Dense H_phi on the electron grid."""
    grid = phi.grid
    pot = build_potential(phi)
    return apply_h_phi_array(pot, grid, np.eye(grid.nx, dtype=complex))


def _require_normalized(psi: ElectronState):
    n2 = psi.norm_sq()
    if abs(n2 - 1.0) > NORM_TOL:
        raise ValueError(f"electron state must be normalized, ||psi||^2 = {n2!r}")


def pekar_energy(psi: ElectronState, phi: PhononField) -> float:
    """<psi, H_phi psi>."""
    _require_normalized(psi)
    pot = build_potential(phi)
    hpsi = apply_h_phi_array(pot, psi.grid, psi.psi)
    return float(psi.grid.cell * np.vdot(psi.psi, hpsi).real)


def density_transform(psi: ElectronState) -> np.ndarray:
    """rho_hat on the active modes."""
    grid = psi.grid
    return grid.cell * grid.fft(psi.density.astype(complex))[grid.fft_index]


def optimal_phi(psi: ElectronState) -> PhononField:
    """Minimizer of ||phi||^2 + <psi, V_phi psi> at fixed psi."""
    _require_normalized(psi)
    grid = psi.grid
    return PhononField.from_active(grid, -grid.coupling * np.conj(density_transform(psi)))


def reduced_energy(psi: ElectronState) -> float:
    """min over phi of <psi, H_phi psi> = <p^2> - sum_j w v_j^2 |rho_hat_j|^2."""
    grid = psi.grid
    rho = density_transform(psi)
    kin = grid.kinetic_form(psi.psi)
    return float(kin - grid.weight * np.sum(grid.coupling**2 * np.abs(rho) ** 2))


@dataclass(frozen=True)
class TraceRow:
    iter: int
    energy: float
    grad_norm: float
    step: float


@dataclass(frozen=True, eq=False)
class PekarResult:
    psi: ElectronState
    phi: PhononField
    energy: float
    trace: list[TraceRow] = field(default_factory=list)
    converged: bool = False


def pekar_minimize(
    cfg: ModelConfig | ModeGrid,
    init_psi: ElectronState,
    max_iter: int = 10_000,
    energy_tol: float = 1e-10,
    grad_tol: float = 1e-7,
    energy_floor: float = -1e6,
    floor_grad_tol: float = 1e-6,
    min_step: float = 1e-8,
) -> PekarResult:
    """Alternate the closed-form phi step with a projected gradient step on psi.

    The psi step is preconditioned by (p^2 + s)^{-1}, projected onto the
    tangent space of the unit sphere and followed by renormalization; an
    Armijo backtracking search on the reduced energy makes the trace
    non-increasing. Stops once the energy decrease is below ``energy_tol``
    and the gradient norm is below ``grad_tol``. Backtracking below
    ``min_step`` means the Armijo decrease is below the round-off of the
    energy; the run then stops and counts as converged when the gradient
    norm is at most ``floor_grad_tol``.
    """
    grid = cfg if isinstance(cfg, ModeGrid) else build_mode_grid(cfg)
    if init_psi.grid is not grid:
        init_psi = ElectronState(grid, init_psi.psi)
    _require_normalized(init_psi)
    cell = grid.cell
    psi = init_psi.psi.copy()
    energy = reduced_energy(init_psi)
    trace: list[TraceRow] = []
    step = 1.0
    converged = False
    last_decrease = math.inf
    for it in range(max_iter + 1):
        state = ElectronState(grid, psi)
        phi = optimal_phi(state)
        pot = build_potential(phi)
        hpsi = apply_h_phi_array(pot, grid, psi)
        lam = float(cell * np.vdot(psi, hpsi).real)
        grad = 2.0 * (hpsi - lam * psi)
        gnorm = math.sqrt(cell * float(np.vdot(grad, grad).real))
        trace.append(TraceRow(it, energy, gnorm, step if it else 0.0))
        if gnorm <= grad_tol and last_decrease < energy_tol:
            converged = True
            break
        if gnorm <= grad_tol * 1e-3:
            converged = True
            break
        if it == max_iter:
            break
        shift = max(1.0, abs(lam - pot.phi_norm_sq))
        direction = grid.ifft(grid.fft(grad) / (grid.p2 + shift))
        direction -= cell * np.vdot(psi, direction) * psi
        slope = cell * float(np.vdot(grad, direction).real)
        if slope <= 0:
            break
        s = min(2.0 * step, 4.0)
        accepted = False
        while s >= min_step:
            trial = psi - s * direction
            trial /= math.sqrt(cell * float(np.vdot(trial, trial).real))
            e_trial = reduced_energy(ElectronState(grid, trial))
            if e_trial <= energy - 1e-4 * s * slope:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            # round-off floor: no representable decrease along the gradient
            converged = gnorm <= floor_grad_tol
            break
        last_decrease = energy - e_trial
        psi, energy, step = trial, e_trial, s
        if energy < energy_floor:
            raise PekarDivergence(
                f"energy {energy:.6g} below floor {energy_floor:.6g} at iteration {it}; grid too coarse"
            )
    state = ElectronState(grid, psi)
    return PekarResult(psi=state, phi=optimal_phi(state), energy=energy, trace=trace, converged=converged)
