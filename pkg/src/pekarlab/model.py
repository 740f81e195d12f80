"""Discretization, Fock truncation and state containers.

All quantities are in strong-coupling units. The electron lives on a periodic
box ``[0, L)^dim`` sampled by ``M`` points per axis; the phonon modes sit on
the momentum lattice ``(2 pi / L) * n`` with ``n`` in ``[-mode_M/2, mode_M/2)``
per axis, the ``k = 0`` mode excluded.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

COUPLING_FORMS = ("inv_k", "unit", "zero")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is set when parsed from text."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        self.detail = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def at_line(self, lines: dict[str, int]) -> "ConfigError":
        """Copy with the line number of the offending key attached, when known."""
        if self.line is not None or self.key not in lines:
            return self
        return ConfigError(self.detail, lines[self.key], self.key)


class BudgetError(RuntimeError):
    """Hybrid dimension above the configured budget."""

    def __init__(self, dimension: int, budget: int):
        self.dimension = dimension
        self.budget = budget
        super().__init__(f"hybrid dimension {dimension} exceeds budget {budget}")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 1
    L: float = 8.0
    M: int = 8
    nmax: int = 2
    alpha: float = 4.0
    alpha0: float = 1.0
    # 0 selects half the phonon momentum radius
    lambda_cut: float = 0.0
    coupling_form: str = "inv_k"
    prop_tol: float = 1e-10
    seed: int = 0
    # 0 selects mode_M = M
    mode_M: int = 0
    max_hybrid_dim: int = 4_000_000
    trunc_threshold: float = 1e-6

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dim must be 1, 2 or 3, got {self.dim}", key="dim")
        if self.M < 2 or self.M % 2:
            raise ConfigError(f"M must be even and >= 2, got {self.M}", key="M")
        if self.nmax < 1:
            raise ConfigError(f"nmax must be >= 1, got {self.nmax}", key="nmax")
        if not self.L > 0:
            raise ConfigError(f"L must be positive, got {self.L}", key="L")
        if not self.alpha0 > 0:
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}", key="alpha0")
        if not self.alpha >= self.alpha0:
            raise ConfigError(f"alpha={self.alpha} below alpha0={self.alpha0}", key="alpha")
        if self.lambda_cut < 0:
            raise ConfigError(f"lambda_cut must be positive, got {self.lambda_cut}", key="lambda_cut")
        if self.coupling_form not in COUPLING_FORMS:
            raise ConfigError(
                f"coupling_form must be one of {COUPLING_FORMS}, got {self.coupling_form!r}", key="coupling_form"
            )
        if not 0 < self.prop_tol <= 1e-4:
            raise ConfigError(f"prop_tol must be in (0, 1e-4], got {self.prop_tol}", key="prop_tol")
        mm = self.modes_per_axis
        if mm < 2 or mm % 2 or mm > self.M:
            raise ConfigError(f"mode_M must be even with 2 <= mode_M <= M, got {mm}", key="mode_M")
        if self.max_hybrid_dim < 1:
            raise ConfigError("max_hybrid_dim must be positive", key="max_hybrid_dim")
        if not 0 < self.trunc_threshold < 1:
            raise ConfigError("trunc_threshold must be in (0, 1)", key="trunc_threshold")

    @property
    def modes_per_axis(self) -> int:
        return self.mode_M or self.M

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values, _ = parse_config_text(text, known=config_field_types())
        try:
            return cls(**values)
        except ConfigError as exc:
            raise exc.at_line(config_key_lines(text)) from None
        except TypeError as exc:  # pragma: no cover - guarded by known keys
            raise ConfigError(str(exc)) from exc


def config_field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(ModelConfig)}


def _coerce(raw: str, typ: type, lineno: int):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            as_float = float(raw)
            if not as_float.is_integer():
                raise ValueError(raw)
            return int(as_float)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {typ.__name__}", lineno) from None


def parse_config_text(
    text: str, known: dict[str, type], extra_ok: bool = False
) -> tuple[dict, dict[str, tuple[str, int]]]:
    """Parse ``key = value`` lines.

    Returns the typed values for ``known`` keys and, when ``extra_ok``, the raw
    strings (with line numbers) for the rest. ``#`` starts a comment.
    """
    values: dict = {}
    extra: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values or key in extra:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if key in known:
            values[key] = _coerce(raw, known[key], lineno)
        elif extra_ok:
            extra[key] = (raw, lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
    return values, extra


def config_key_lines(text: str) -> dict[str, int]:
    """Line number of each ``key = value`` line."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        if "=" in line:
            out.setdefault(line.split("=", 1)[0].strip(), lineno)
    return out


def coupling_profile(form: str, knorm: np.ndarray) -> np.ndarray:
    """Form factor v(k) on the given momentum magnitudes (all nonzero)."""
    if form == "inv_k":
        return 1.0 / knorm
    if form == "unit":
        return np.ones_like(knorm)
    if form == "zero":
        return np.zeros_like(knorm)
    raise ConfigError(f"unknown coupling_form {form!r}")


@dataclass(frozen=True, eq=False)
class ModeGrid:
    """Electron grid plus the phonon momentum lattice."""

    dim: int
    L: float
    M: int
    mode_M: int
    kpoints: np.ndarray
    weight: float
    zero_index: int
    coupling_form: str = "inv_k"

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.kpoints), self.weight)

    @cached_property
    def active(self) -> np.ndarray:
        return np.delete(np.arange(len(self.kpoints)), self.zero_index)

    @property
    def n_modes(self) -> int:
        return len(self.kpoints) - 1

    @cached_property
    def k_active(self) -> np.ndarray:
        return self.kpoints[self.active]

    @cached_property
    def knorm(self) -> np.ndarray:
        return np.linalg.norm(self.k_active, axis=1)

    @cached_property
    def coupling(self) -> np.ndarray:
        return coupling_profile(self.coupling_form, self.knorm)

    @property
    def k_radius(self) -> float:
        return float(self.knorm.max())

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def cell(self) -> float:
        """Spatial quadrature weight h**dim."""
        return self.h**self.dim

    @property
    def nx(self) -> int:
        return self.M**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.dim

    @cached_property
    def x(self) -> np.ndarray:
        """Grid points, shape (nx, dim), C order."""
        axes = [np.arange(self.M) * self.h] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    @cached_property
    def q(self) -> np.ndarray:
        """Electron momenta in FFT order, shape (nx, dim)."""
        axis = 2 * np.pi / self.L * np.fft.fftfreq(self.M, d=1.0 / self.M)
        axes = [axis] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    @cached_property
    def p2(self) -> np.ndarray:
        return np.sum(self.q**2, axis=1)

    @cached_property
    def mode_lattice(self) -> np.ndarray:
        """Integer lattice vectors n of the active modes, shape (K, dim)."""
        return np.rint(self.k_active * self.L / (2 * np.pi)).astype(int)

    @cached_property
    def fft_index(self) -> np.ndarray:
        """Flat index of each active mode in an FFT array of the electron grid."""
        return np.ravel_multi_index(tuple((self.mode_lattice % self.M).T), self.shape)

    # transforms act on the leading (spatial) axis of an (nx, ...) array
    def fft(self, arr: np.ndarray) -> np.ndarray:
        rest = arr.shape[1:]
        out = np.fft.fftn(arr.reshape(self.shape + rest), axes=tuple(range(self.dim)))
        return out.reshape((self.nx,) + rest)

    def ifft(self, arr: np.ndarray) -> np.ndarray:
        rest = arr.shape[1:]
        out = np.fft.ifftn(arr.reshape(self.shape + rest), axes=tuple(range(self.dim)))
        return out.reshape((self.nx,) + rest)

    def kinetic(self, arr: np.ndarray) -> np.ndarray:
        """Spectral p**2 on the leading axis."""
        p2 = self.p2.reshape((self.nx,) + (1,) * (arr.ndim - 1))
        return self.ifft(p2 * self.fft(arr))

    def kinetic_form(self, arr: np.ndarray) -> float:
        """<arr, p**2 arr> by Parseval."""
        spec = np.abs(self.fft(arr)) ** 2
        p2 = self.p2.reshape((self.nx,) + (1,) * (arr.ndim - 1))
        return float(self.cell / self.nx * np.sum(p2 * spec))


def build_mode_grid(cfg: ModelConfig) -> ModeGrid:
    mm = cfg.modes_per_axis
    axis = np.arange(-mm // 2, mm // 2)
    lattice = np.array(list(itertools.product(axis, repeat=cfg.dim)), dtype=float)
    kpoints = 2 * np.pi / cfg.L * lattice
    zero_index = int(np.flatnonzero(np.all(lattice == 0, axis=1))[0])
    return ModeGrid(
        dim=cfg.dim,
        L=float(cfg.L),
        M=cfg.M,
        mode_M=mm,
        kpoints=kpoints,
        weight=(2 * np.pi / cfg.L) ** cfg.dim,
        zero_index=zero_index,
        coupling_form=cfg.coupling_form,
    )


def fock_dimension(n_modes: int, nmax: int) -> int:
    """Number of occupation vectors in N^n_modes with total <= nmax."""
    return math.comb(n_modes + nmax, nmax)


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Occupation vectors with total <= nmax, ordered by total then lexicographically."""

    n_modes: int
    nmax: int
    occs: np.ndarray

    @classmethod
    def build(cls, n_modes: int, nmax: int) -> "FockBasis":
        rows = []
        for total in range(nmax + 1):
            block = []
            for combo in itertools.combinations_with_replacement(range(n_modes), total):
                occ = [0] * n_modes
                for j in combo:
                    occ[j] += 1
                block.append(tuple(occ))
            block.sort()
            rows.extend(block)
        occs = np.array(rows, dtype=np.int64).reshape(len(rows), n_modes)
        return cls(n_modes=n_modes, nmax=nmax, occs=occs)

    def __len__(self) -> int:
        return len(self.occs)

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in occ): i for i, occ in enumerate(self.occs)}

    def ordinal(self, occ) -> int:
        return self.index[tuple(int(v) for v in occ)]

    def occupation(self, ordinal: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.occs[ordinal])

    @cached_property
    def totals(self) -> np.ndarray:
        return self.occs.sum(axis=1)

    @cached_property
    def lowering(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per mode j: (src, dst, factor) with b_j |src> = factor |dst>."""
        tables = []
        for j in range(self.n_modes):
            src = np.flatnonzero(self.occs[:, j] > 0)
            lowered = self.occs[src].copy()
            lowered[:, j] -= 1
            dst = np.array([self.index[tuple(int(v) for v in occ)] for occ in lowered], dtype=np.int64)
            fac = np.sqrt(self.occs[src, j].astype(float))
            tables.append((src, dst, fac))
        return tables


@dataclass(frozen=True, eq=False)
class Model:
    """Configuration with its mode grid and Fock basis.

    Unpacks as ``grid, basis = build_model(cfg)``.
    """

    cfg: ModelConfig
    grid: ModeGrid
    basis: FockBasis

    def __iter__(self) -> Iterator:
        return iter((self.grid, self.basis))

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    @property
    def nx(self) -> int:
        return self.grid.nx

    @property
    def nf(self) -> int:
        return len(self.basis)

    @property
    def dimension(self) -> int:
        return self.nx * self.nf

    @cached_property
    def phases(self) -> np.ndarray:
        """e^{-i k_j . x_m}, shape (K, nx)."""
        return np.exp(-1j * self.grid.k_active @ self.grid.x.T)

    @cached_property
    def top_mask(self) -> np.ndarray:
        return self.basis.totals == self.cfg.nmax

    def compatible(self, other: "Model") -> bool:
        return self is other or self.cfg == other.cfg

    def with_alpha(self, alpha: float) -> "Model":
        if alpha == self.cfg.alpha:
            return self
        return Model(cfg=self.cfg.replace(alpha=alpha), grid=self.grid, basis=self.basis)


def build_model(cfg: ModelConfig) -> Model:
    grid = build_mode_grid(cfg)
    nf = fock_dimension(grid.n_modes, cfg.nmax)
    dimension = grid.nx * nf
    if dimension > cfg.max_hybrid_dim:
        raise BudgetError(dimension, cfg.max_hybrid_dim)
    return Model(cfg=cfg, grid=grid, basis=FockBasis.build(grid.n_modes, cfg.nmax))


def _frozen(arr, dtype=complex) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class PhononField:
    """Phonon amplitudes on every lattice point; the k = 0 entry is zero."""

    grid: ModeGrid
    amps: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex)
        if amps.shape != (len(self.grid.kpoints),):
            raise ValueError(f"amps must have shape ({len(self.grid.kpoints)},), got {amps.shape}")
        amps[self.grid.zero_index] = 0
        object.__setattr__(self, "amps", _frozen(amps))

    @classmethod
    def zeros(cls, grid: ModeGrid) -> "PhononField":
        return cls(grid, np.zeros(len(grid.kpoints), dtype=complex))

    @classmethod
    def from_active(cls, grid: ModeGrid, values) -> "PhononField":
        amps = np.zeros(len(grid.kpoints), dtype=complex)
        amps[grid.active] = values
        return cls(grid, amps)

    @property
    def active(self) -> np.ndarray:
        return self.amps[self.grid.active]

    def norm_sq(self) -> float:
        return float(self.grid.weight * np.sum(np.abs(self.amps) ** 2))

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def __add__(self, other: "PhononField") -> "PhononField":
        return PhononField(self.grid, self.amps + other.amps)

    def __mul__(self, scalar) -> "PhononField":
        return PhononField(self.grid, self.amps * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ElectronState:
    grid: ModeGrid
    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex).reshape(-1)
        if psi.shape != (self.grid.nx,):
            raise ValueError(f"psi must have {self.grid.nx} entries, got {psi.size}")
        object.__setattr__(self, "psi", _frozen(psi))

    @classmethod
    def gaussian(cls, grid: ModeGrid, sigma: float, center=None, momentum=None) -> "ElectronState":
        """Normalized Gaussian exp(-|x-c|^2 / (2 sigma^2)), periodized by minimum image."""
        center = np.full(grid.dim, grid.L / 2) if center is None else np.asarray(center, float)
        d = (grid.x - center + grid.L / 2) % grid.L - grid.L / 2
        psi = np.exp(-np.sum(d**2, axis=1) / (2 * sigma**2)).astype(complex)
        if momentum is not None:
            psi = psi * np.exp(1j * grid.x @ np.asarray(momentum, float))
        return cls(grid, psi).normalized()

    @classmethod
    def plane_wave(cls, grid: ModeGrid, n) -> "ElectronState":
        """Normalized e^{i k.x} with k = 2 pi n / L."""
        k = 2 * np.pi / grid.L * np.asarray(n, float).reshape(grid.dim)
        return cls(grid, np.exp(1j * grid.x @ k) / grid.L ** (grid.dim / 2))

    @classmethod
    def random(cls, grid: ModeGrid, rng: np.random.Generator) -> "ElectronState":
        z = rng.standard_normal(grid.nx) + 1j * rng.standard_normal(grid.nx)
        return cls(grid, z).normalized()

    def norm_sq(self) -> float:
        return float(self.grid.cell * np.vdot(self.psi, self.psi).real)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def normalized(self) -> "ElectronState":
        return ElectronState(self.grid, self.psi / self.norm())

    def inner(self, other: "ElectronState") -> complex:
        return complex(self.grid.cell * np.vdot(self.psi, other.psi))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


@dataclass(frozen=True, eq=False)
class HybridState:
    """Coefficients over (electron grid point, Fock ordinal), shape (nx, nf)."""

    model: Model
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        expected = (self.model.nx, self.model.nf)
        if coeffs.shape != expected:
            coeffs = coeffs.reshape(expected)
        object.__setattr__(self, "coeffs", _frozen(coeffs))

    @classmethod
    def zeros(cls, model: Model) -> "HybridState":
        return cls(model, np.zeros((model.nx, model.nf), dtype=complex))

    @classmethod
    def product(cls, model: Model, psi: ElectronState, fock=None) -> "HybridState":
        """psi tensor a Fock vector (default: the vacuum)."""
        if fock is None:
            fock = np.zeros(model.nf, dtype=complex)
            fock[0] = 1.0
        return cls(model, np.outer(psi.psi, np.asarray(fock, dtype=complex)))

    @classmethod
    def random(cls, model: Model, rng: np.random.Generator, below_top: bool = False) -> "HybridState":
        """Normalized complex Gaussian coefficients."""
        shape = (model.nx, model.nf)
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        if below_top:
            z[:, model.top_mask] = 0
        return cls(model, z).normalized()

    @property
    def cell(self) -> float:
        return self.model.grid.cell

    def norm_sq(self) -> float:
        return float(self.cell * np.vdot(self.coeffs, self.coeffs).real)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def normalized(self) -> "HybridState":
        return HybridState(self.model, self.coeffs / self.norm())

    def sector_masses(self) -> np.ndarray:
        """norm**2 restricted to each total occupation 0..nmax."""
        per_ordinal = self.cell * np.sum(np.abs(self.coeffs) ** 2, axis=0)
        return np.bincount(self.model.basis.totals, weights=per_ordinal, minlength=self.model.cfg.nmax + 1)

    def top_mass(self) -> float:
        return float(self.sector_masses()[-1])

    def top_fraction(self) -> float:
        n2 = self.norm_sq()
        return self.top_mass() / n2 if n2 > 0 else 0.0

    def electron(self, ordinal: int = 0) -> ElectronState:
        return ElectronState(self.model.grid, self.coeffs[:, ordinal])

    def _check(self, other: "HybridState"):
        if not self.model.compatible(other.model):
            raise ValueError("hybrid states belong to different models")

    def __add__(self, other: "HybridState") -> "HybridState":
        self._check(other)
        return HybridState(self.model, self.coeffs + other.coeffs)

    def __sub__(self, other: "HybridState") -> "HybridState":
        self._check(other)
        return HybridState(self.model, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "HybridState":
        return HybridState(self.model, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "HybridState":
        return HybridState(self.model, -self.coeffs)


def inner(a: HybridState, b: HybridState) -> complex:
    """<a, b>, antilinear in the first argument."""
    if not a.model.compatible(b.model):
        raise ValueError("inner product of states from different models")
    return complex(a.cell * np.vdot(a.coeffs, b.coeffs))


def h1_norm(psi: ElectronState) -> float:
    """(||psi||^2 + ||p psi||^2)^{1/2} with spectral p."""
    return math.sqrt(psi.norm_sq() + psi.grid.kinetic_form(psi.psi))


def number_diagonal(model: Model) -> np.ndarray:
    """Eigenvalues alpha^-2 * (total occupation) per Fock ordinal."""
    return model.basis.totals / model.alpha**2


def apriori_constants(psi: HybridState) -> tuple[float, float]:
    """(||(p^2+N+1)^{1/2} Psi||, ||(p^2+1)^{1/2} N Psi||)."""
    grid = psi.model.grid
    c = psi.coeffs
    nvals = number_diagonal(psi.model)
    weight_n = grid.cell * float(np.sum(nvals * np.sum(np.abs(c) ** 2, axis=0)))
    m1 = math.sqrt(psi.norm_sq() + grid.kinetic_form(c) + weight_n)
    nc = c * nvals[None, :]
    m2 = math.sqrt(grid.cell * float(np.vdot(nc, nc).real) + grid.kinetic_form(nc))
    return m1, m2
