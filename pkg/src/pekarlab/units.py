"""Conversion between standard Froehlich units and strong-coupling units.

With x~ = alpha x the Hamiltonian becomes alpha^2 times the strong-coupling one,
so each quantity picks up an explicit power of alpha::

    x~ = alpha x,  p~ = p / alpha,  k~ = k / alpha,  E~ = E / alpha^2,
    t~ = alpha^2 t,  mode amplitude a~ = alpha^{1/2} a.

All simulation internals use strong-coupling units; conversion happens only at I/O.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from pekarlab.model import ConfigError, parse_config_text

# quantity -> power of alpha multiplying the standard-units value
SCALE_EXPONENTS = {
    "length": 1.0,
    "momentum": -1.0,
    "wavevector": -1.0,
    "energy": -2.0,
    "time": 2.0,
    "amplitude": 0.5,
}
FRAMES = ("standard", "strong")


@dataclass(frozen=True)
class UnitDescriptor:
    alpha: float
    length: float = 1.0
    momentum: float = 1.0
    wavevector: float = 1.0
    energy: float = 1.0
    time: float = 1.0
    amplitude: float = 1.0
    frame: str = "standard"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.frame not in FRAMES:
            raise ConfigError(f"frame must be one of {FRAMES}, got {self.frame!r}")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            lines.append(f"{f.name} = {val if isinstance(val, str) else repr(float(val))}\n")
        return "".join(lines)


def scale_factor(quantity: str, alpha: float) -> float:
    """Factor s with strong = s * standard."""
    return alpha ** SCALE_EXPONENTS[quantity]


def to_strong(desc: UnitDescriptor) -> UnitDescriptor:
    if desc.frame != "standard":
        raise ValueError("descriptor is already in strong-coupling units")
    vals = {q: getattr(desc, q) * scale_factor(q, desc.alpha) for q in SCALE_EXPONENTS}
    return dataclasses.replace(desc, frame="strong", **vals)


def from_strong(desc: UnitDescriptor) -> UnitDescriptor:
    if desc.frame != "strong":
        raise ValueError("descriptor is already in standard units")
    vals = {q: getattr(desc, q) / scale_factor(q, desc.alpha) for q in SCALE_EXPONENTS}
    return dataclasses.replace(desc, frame="standard", **vals)


def convert(desc: UnitDescriptor) -> UnitDescriptor:
    """Map a descriptor to the other frame."""
    return to_strong(desc) if desc.frame == "standard" else from_strong(desc)


def read_descriptor(text: str) -> UnitDescriptor:
    types = {f.name: (str if f.name == "frame" else float) for f in dataclasses.fields(UnitDescriptor)}
    values, _ = parse_config_text(text, known=types)
    if "alpha" not in values:
        raise ConfigError("descriptor needs an alpha line")
    return UnitDescriptor(**values)
