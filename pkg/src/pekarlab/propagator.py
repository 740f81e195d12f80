"""Krylov (Lanczos) exponential propagator and the full-vs-effective deviation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from pekarlab.model import HybridState, apriori_constants

M_MAX = 40


@dataclass(frozen=True)
class KrylovInfo:
    steps: int
    max_dim: int
    breakdowns: int


def _tridiag_exp_e1(alphas, betas, dt):
    """exp(-i dt T) e_1 for the symmetric tridiagonal T."""
    m = len(alphas)
    if m == 1:
        return np.array([np.exp(-1j * dt * alphas[0])])
    theta, s = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas[: m - 1]))
    return s @ (np.exp(-1j * dt * theta) * s[0, :])


def expm_krylov(
    matvec: Callable[[np.ndarray], np.ndarray],
    v: np.ndarray,
    t: float,
    tol: float,
    m_max: int = M_MAX,
) -> tuple[np.ndarray, KrylovInfo]:
    """exp(-i t A) v for Hermitian A given by ``matvec``.

    Adaptive in both the subspace dimension (grown until the a posteriori
    estimate ``beta * b_m * |e_m^T exp(-i dt T_m) e_1|`` meets ``tol`` for the
    remaining interval, at most ``m_max``) and the step size (halved until the
    estimate is met with ``m_max`` vectors).
    """
    w = np.array(v, dtype=complex)
    total = abs(float(t))
    direction = 1.0 if t >= 0 else -1.0
    done = 0.0
    steps = max_dim = breakdowns = 0
    n = w.size
    m_cap = min(m_max, n)
    while done < total and total - done > 1e-15 * total:
        remaining = total - done
        beta = np.linalg.norm(w)
        if beta == 0.0:
            break
        basis = np.empty((m_cap, n), dtype=complex)
        basis[0] = w / beta
        alphas: list[float] = []
        betas: list[float] = []
        step = remaining
        coeffs = None
        for j in range(m_cap):
            u = matvec(basis[j])
            a_j = float(np.vdot(basis[j], u).real)
            alphas.append(a_j)
            u = u - a_j * basis[j]
            if j > 0:
                u = u - betas[j - 1] * basis[j - 1]
            # two passes of full reorthogonalization
            for _ in range(2):
                u = u - basis[: j + 1].T @ (basis[: j + 1].conj() @ u)
            b_j = float(np.linalg.norm(u))
            betas.append(b_j)
            scale = max(abs(a_j), betas[j - 1] if j > 0 else 0.0, 1.0)
            if b_j <= 1e-13 * scale:
                breakdowns += 1
                coeffs = _tridiag_exp_e1(alphas, betas, direction * remaining)
                break
            if j + 1 < m_cap:
                basis[j + 1] = u / b_j
            c = _tridiag_exp_e1(alphas, betas, direction * remaining)
            if beta * b_j * abs(c[-1]) <= tol:
                coeffs = c
                break
        m = len(alphas)
        max_dim = max(max_dim, m)
        if coeffs is None:
            b_m = betas[-1]
            step = remaining
            for _ in range(200):
                step *= 0.5
                c = _tridiag_exp_e1(alphas, betas, direction * step)
                if beta * b_m * abs(c[-1]) <= tol:
                    coeffs = c
                    break
            if coeffs is None:  # pragma: no cover - tol below round-off
                raise RuntimeError("Krylov step size underflow")
        w = beta * (coeffs @ basis[:m])
        done += step
        steps += 1
    return w, KrylovInfo(steps=steps, max_dim=max_dim, breakdowns=breakdowns)


def evolve(H, psi: HybridState, t: float, tol: float | None = None, return_info: bool = False):
    """exp(-i H t) psi for a Hermitian OperatorHandle ``H``."""
    if not getattr(H, "hermitian", False):
        raise ValueError(f"evolve needs a Hermitian generator, got {getattr(H, 'label', H)!r}")
    if tol is None:
        tol = psi.model.cfg.prop_tol
    if not tol > 0:
        raise ValueError("tol must be positive")
    model = psi.model
    if t == 0:
        out, info = psi, KrylovInfo(0, 0, 0)
    else:
        shape = psi.coeffs.shape

        def matvec(x):
            return H(HybridState(model, x.reshape(shape))).coeffs.reshape(-1)

        vec, info = expm_krylov(matvec, psi.coeffs.reshape(-1), t, tol)
        out = HybridState(model, vec.reshape(shape))
    if return_info:
        return out, info
    return out


@dataclass(frozen=True)
class DeviationPoint:
    t: float
    D: float
    top_sector_mass: float
    norm_drift: float
    # ||(p^2+N+1)^{1/2} Psi(t)|| / ||(p^2+N+1)^{1/2} Psi(0)|| along exp(-iHt)
    energy_ratio: float
    # ||(p^2+1)^{1/2} Psi(t)|| / ||(p^2+1)^{1/2} Psi(0)|| along exp(-iH_phi t)
    effective_ratio: float
    flagged: bool


def _weighted_norms(psi: HybridState) -> tuple[float, float]:
    m1, _ = apriori_constants(psi)
    grid = psi.model.grid
    kin = math.sqrt(psi.norm_sq() + grid.kinetic_form(psi.coeffs))
    return m1, kin


def deviation(
    alpha: float,
    phi,
    psi0: HybridState,
    t_grid: Sequence[float],
    tol: float | None = None,
    decomposition=None,
) -> list[DeviationPoint]:
    """D(t) = ||exp(-iHt) Psi0 - exp(-i H_phi t) Psi0||^2 on a sorted time grid.

    Both trajectories are advanced between consecutive grid times with the
    same tolerance. ``decomposition`` may pass a prebuilt HDecomposition.
    """
    import warnings

    from pekarlab.froehlich import assemble_transformed_H

    model = psi0.model.with_alpha(alpha)
    psi0 = HybridState(model, psi0.coeffs)
    cfg = model.cfg
    tol = cfg.prop_tol if tol is None else tol
    times = [float(t) for t in t_grid]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("t_grid must be sorted")
    m1, m2 = apriori_constants(psi0)
    if m2 > m1 / alpha**2 * (1 + 1e-12):
        warnings.warn(f"initial state fails a-priori screening: M2={m2:.3e} > M1/alpha^2={m1 / alpha**2:.3e}")
    dec = decomposition or assemble_transformed_H(phi, model)
    e0, k0 = _weighted_norms(psi0)
    n0 = psi0.norm()
    full = eff = psi0
    clock = 0.0
    out = []
    for t in times:
        if t != clock:
            full = evolve(dec.H_total, full, t - clock, tol)
            eff = evolve(dec.H_phi, eff, t - clock, tol)
            clock = t
        diff = full - eff
        top = full.top_fraction()
        e_t, _ = _weighted_norms(full)
        _, k_t = _weighted_norms(eff)
        out.append(
            DeviationPoint(
                t=t,
                D=diff.norm_sq(),
                top_sector_mass=top,
                norm_drift=abs(full.norm() - n0),
                energy_ratio=e_t / e0,
                effective_ratio=k_t / k0,
                flagged=top > cfg.trunc_threshold,
            )
        )
    return out
