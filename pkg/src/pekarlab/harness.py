"""Experiment configuration, alpha/t sweeps, envelope fitting and report output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from pekarlab.effective import optimal_phi
from pekarlab.model import (
    ConfigError,
    ElectronState,
    HybridState,
    Model,
    ModelConfig,
    apriori_constants,
    build_model,
    config_field_types,
    config_key_lines,
    parse_config_text,
)
from pekarlab.propagator import deviation

INITIAL_KINDS = ("pekar-product", "perturbed-product")


class InsufficientData(ValueError):
    pass


def _float_list(raw: str, lineno: int) -> tuple[float, ...]:
    try:
        vals = tuple(float(s) for s in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as a list of numbers", lineno) from None
    if not vals:
        raise ConfigError("empty list", lineno)
    return vals


@dataclass(frozen=True)
class ExperimentConfig:
    """Model parameters plus the sweep and fit settings of one experiment."""

    model: ModelConfig = field(default_factory=ModelConfig)
    alphas: tuple[float, ...] = (2.0, 4.0, 8.0)
    t_max: float = 1.0
    n_times: int = 11
    initial: str = "pekar-product"
    sigma: float = 2.0
    # coefficient of the alpha^-2 one-phonon admixture of perturbed-product
    dressing: float = 1.0
    fit_alpha: float = 4.0
    slope_min: float = -2.3
    slope_max: float = -1.7
    max_rel_rms: float = 0.15
    envelope_prefactor: float = 2.0
    samples: int = 1000
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if any(a < self.model.alpha0 for a in self.alphas):
            raise ConfigError(f"alphas {self.alphas} must be >= alpha0={self.model.alpha0}", key="alphas")
        if self.initial not in INITIAL_KINDS:
            raise ConfigError(f"initial must be one of {INITIAL_KINDS}, got {self.initial!r}", key="initial")
        if not self.t_max >= 0:
            raise ConfigError("t_max must be >= 0", key="t_max")
        if self.n_times < 1:
            raise ConfigError("n_times must be >= 1", key="n_times")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive", key="sigma")
        if self.samples < 1 or self.workers < 1:
            raise ConfigError("samples and workers must be positive")

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_times)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        model_types = config_field_types()
        exp_types = {f.name: type(f.default) for f in dataclasses.fields(cls) if f.name not in ("model", "alphas")}
        known = {**model_types, **exp_types}
        values, extra = parse_config_text(text, known=known, extra_ok=True)
        kwargs = {}
        for key, (raw, lineno) in extra.items():
            if key != "alphas":
                raise ConfigError(f"unknown key {key!r}", lineno)
            kwargs["alphas"] = _float_list(raw, lineno)
        model_vals = {k: v for k, v in values.items() if k in model_types}
        exp_vals = {k: v for k, v in values.items() if k not in model_types}
        try:
            return cls(model=ModelConfig(**model_vals), **exp_vals, **kwargs)
        except ConfigError as exc:
            raise exc.at_line(config_key_lines(text)) from None

    def to_text(self) -> str:
        lines = [self.model.to_text()]
        for f in dataclasses.fields(self):
            if f.name == "model":
                continue
            val = getattr(self, f.name)
            if f.name == "alphas":
                val = " ".join(repr(a) for a in val)
            lines.append(f"{f.name} = {val}\n")
        return "".join(lines)


def default_experiment() -> ExperimentConfig:
    """One-dimensional CI-sized sweep: M=8, 3 active modes, nmax=2."""
    model = ModelConfig(dim=1, L=16.0, M=8, mode_M=4, nmax=2, alpha=4.0, trunc_threshold=0.1)
    return ExperimentConfig(model=model)


def faithful3d_experiment() -> ExperimentConfig:
    """Three-dimensional preset with v(k) = 1/|k|: M=4, nmax=1."""
    model = ModelConfig(dim=3, L=16.0, M=4, nmax=1, alpha=4.0, trunc_threshold=0.1)
    return ExperimentConfig(model=model, slope_min=-2.5, slope_max=-1.5)


PRESETS = {"default": default_experiment, "faithful3d": faithful3d_experiment}


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    t: float
    D: float
    M1: float
    top_sector_mass: float
    norm_drift: float
    wall_time_ms: float
    flagged: bool


RECORD_COLUMNS = tuple(f.name for f in dataclasses.fields(SweepRecord))


def initial_state(model: Model, psi: ElectronState, kind: str, dressing: float = 1.0) -> HybridState:
    """psi (x) Omega, or psi (x) (Omega + alpha^-2 d sum_j u_j |1_j>) renormalized.

    The one-phonon weights u_j are the unit vector along sqrt(w) v_j.
    """
    if kind == "pekar-product":
        return HybridState.product(model, psi)
    if kind != "perturbed-product":
        raise ValueError(f"unknown initial state kind {kind!r}")
    basis = model.basis
    fock = np.zeros(model.nf, dtype=complex)
    fock[0] = 1.0
    u = model.grid.coupling.astype(float)
    nrm = np.linalg.norm(u)
    if nrm > 0:
        u = u / nrm
        for j in range(model.grid.n_modes):
            occ = [0] * model.grid.n_modes
            occ[j] = 1
            fock[basis.ordinal(tuple(occ))] = dressing * u[j] / model.alpha**2
    fock /= np.linalg.norm(fock)
    return HybridState.product(model, psi, fock)


def _trajectory(args) -> list[SweepRecord]:
    cfg, alpha, times, sigma, kind, dressing, timing = args
    model = build_model(cfg.replace(alpha=alpha))
    psi = ElectronState.gaussian(model.grid, sigma)
    phi = optimal_phi(psi)
    psi0 = initial_state(model, psi, kind, dressing)
    m1, _ = apriori_constants(psi0)
    start = time.perf_counter()
    points = deviation(alpha, phi, psi0, times)
    elapsed = (time.perf_counter() - start) * 1e3 if timing else 0.0
    # the trajectory is computed in one pass; its cost is attributed to the last point
    return [
        SweepRecord(
            alpha=float(alpha),
            t=p.t,
            D=p.D,
            M1=m1,
            top_sector_mass=p.top_sector_mass,
            norm_drift=p.norm_drift,
            wall_time_ms=elapsed if i == len(points) - 1 else 0.0,
            flagged=p.flagged,
        )
        for i, p in enumerate(points)
    ]


def run_sweep(
    cfg: ModelConfig,
    alphas: Sequence[float],
    t_grid: Sequence[float],
    initial: str = "pekar-product",
    sigma: float = 2.0,
    dressing: float = 1.0,
    record_timing: bool = False,
    workers: int = 1,
) -> list[SweepRecord]:
    """Deviation records over alphas x t_grid, ordered by (alpha, t).

    The initial electron state is the normalized Gaussian of width ``sigma``
    centered in the box and phi is its optimal field, the same for every alpha.
    """
    if initial not in INITIAL_KINDS:
        raise ConfigError(f"initial must be one of {INITIAL_KINDS}, got {initial!r}")
    for a in alphas:
        if a < cfg.alpha0:
            raise ConfigError(f"alpha={a} below alpha0={cfg.alpha0}")
    # budget check before any work
    build_model(cfg)
    times = sorted(float(t) for t in t_grid)
    jobs = [(cfg, float(a), times, sigma, initial, dressing, record_timing) for a in sorted(alphas)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trajectory, jobs))
    else:
        results = [_trajectory(job) for job in jobs]
    records = [r for rows in results for r in rows]
    records.sort(key=lambda r: (r.alpha, r.t))
    return records


def run_experiment(exp: ExperimentConfig) -> list[SweepRecord]:
    return run_sweep(
        exp.model,
        exp.alphas,
        exp.t_grid,
        initial=exp.initial,
        sigma=exp.sigma,
        dressing=exp.dressing,
        record_timing=exp.record_timing,
        workers=exp.workers,
    )


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return repr(float(x))


def records_to_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        vals = {c: (row[c] == "true") if c == "flagged" else float(row[c]) for c in RECORD_COLUMNS}
        out.append(SweepRecord(**vals))
    return out


@dataclass(frozen=True)
class FitReport:
    alpha_scaling_slope: float
    growth_C: float
    growth_c: float
    residuals: list[float]
    envelope_ok: bool
    rel_rms: float
    fit_alpha: float
    slope_t: float
    slope_alphas: list[float]
    envelope_prefactor: float
    # per alpha: time where the fitted envelope exceeds the trivial bound 4 ||Psi||^2
    crossover_time: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def fit_growth(t: np.ndarray, d: np.ndarray, starts: Sequence[float] = (0.5, 1.0, 2.0, 4.0)):
    """Least-squares (c, C) for d ~ c (e^{C t} - 1), best over the C starts."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    scale = float(np.max(np.abs(d))) or 1.0

    def resid(p):
        return (p[0] * np.expm1(p[1] * t) - d) / scale

    best = None
    for c0 in starts:
        denom = float(np.sum(np.expm1(c0 * t) ** 2))
        amp0 = float(np.dot(np.expm1(c0 * t), d) / denom) if denom > 0 else 0.0
        sol = least_squares(resid, x0=[amp0, c0], x_scale=[max(abs(amp0), 1e-300), 1.0],
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or sol.cost < best.cost:
            best = sol
    c, big_c = best.x
    return float(c), float(big_c), best.fun * scale


def envelope_holds(records: Sequence[SweepRecord], growth_C: float, prefactor: float = 2.0) -> bool:
    """D <= prefactor M1^2 alpha^-2 (e^{C|t|} - 1) on every record."""
    for r in records:
        bound = prefactor * r.M1**2 / r.alpha**2 * math.expm1(growth_C * abs(r.t))
        if r.D > bound + 1e-300:
            return False
    return True


def fit_report(
    records: Sequence[SweepRecord],
    fit_alpha: float | None = None,
    prefactor: float = 2.0,
) -> FitReport:
    """Alpha-exponent and growth fits on the unflagged records.

    The slope is the least-squares line of log D against log alpha at the
    largest time present for every alpha; (c, C) fit D(t) at ``fit_alpha``
    (default: the median alpha).
    """
    good = [r for r in records if not r.flagged]
    by_alpha: dict[float, list[SweepRecord]] = {}
    for r in good:
        by_alpha.setdefault(r.alpha, []).append(r)
    alphas = sorted(a for a, rows in by_alpha.items() if len({r.t for r in rows}) >= 5)
    if len(alphas) < 3:
        raise InsufficientData(
            f"need >= 3 alpha values with >= 5 unflagged times, have {len(alphas)} "
            f"({len(records) - len(good)} of {len(records)} records flagged)"
        )
    common = set.intersection(*({r.t for r in by_alpha[a] if r.D > 0} for a in alphas))
    if not common:
        raise InsufficientData("no time with positive D common to all alpha values")
    t_star = max(common)
    d_star = [next(r.D for r in by_alpha[a] if r.t == t_star) for a in alphas]
    slope = float(np.polyfit(np.log(alphas), np.log(d_star), 1)[0])

    if fit_alpha is None:
        fit_alpha = alphas[len(alphas) // 2]
    fit_alpha = min(alphas, key=lambda a: abs(a - fit_alpha))
    rows = sorted(by_alpha[fit_alpha], key=lambda r: r.t)
    t = np.array([r.t for r in rows])
    d = np.array([r.D for r in rows])
    c, big_c, res = fit_growth(t, d)
    rms_d = math.sqrt(float(np.mean(d**2)))
    rel_rms = math.sqrt(float(np.mean(res**2))) / rms_d if rms_d > 0 else 0.0

    crossover = {}
    for a in sorted(by_alpha):
        r0 = by_alpha[a][0]
        norm_sq = 1.0
        amp = prefactor * r0.M1**2 / a**2
        crossover[repr(a)] = math.log1p(4 * norm_sq / amp) / big_c if big_c > 0 else math.inf
    return FitReport(
        alpha_scaling_slope=slope,
        growth_C=big_c,
        growth_c=c,
        residuals=[float(x) for x in res],
        envelope_ok=big_c > 0 and envelope_holds(records, big_c, prefactor),
        rel_rms=rel_rms,
        fit_alpha=float(fit_alpha),
        slope_t=float(t_star),
        slope_alphas=[float(a) for a in alphas],
        envelope_prefactor=prefactor,
        crossover_time=crossover,
    )


def collapse_table(records: Sequence[SweepRecord]) -> dict[float, list[tuple[float, float]]]:
    """alpha -> [(t, alpha^2 D)]."""
    out: dict[float, list[tuple[float, float]]] = {}
    for r in records:
        out.setdefault(r.alpha, []).append((r.t, r.alpha**2 * r.D))
    return out
