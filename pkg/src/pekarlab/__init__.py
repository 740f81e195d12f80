"""Strong-coupling polaron laboratory.

Weyl-transformed Froehlich Hamiltonian on a periodic grid with a truncated
bosonic Fock space, Krylov time evolution, and numerical checks of the
operator bounds that control the effective (Pekar) dynamics.
"""

from pekarlab.model import (
    BudgetError,
    ConfigError,
    ElectronState,
    FockBasis,
    HybridState,
    Model,
    ModelConfig,
    ModeGrid,
    PhononField,
    apriori_constants,
    build_mode_grid,
    build_model,
    h1_norm,
    inner,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ConfigError",
    "ElectronState",
    "FockBasis",
    "HybridState",
    "Model",
    "ModelConfig",
    "ModeGrid",
    "PhononField",
    "apriori_constants",
    "build_mode_grid",
    "build_model",
    "h1_norm",
    "inner",
]
