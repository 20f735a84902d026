"""Simulation and symbolic-averaging laboratory for a three-rotor chain."""

from .model import ChainParams, State, TrigPotential, hamiltonian, forces, sde_drift
from .phasepoly import PhasePoly, RationalComplex

__all__ = [
    "ChainParams", "State", "TrigPotential",
    "hamiltonian", "forces", "sde_drift",
    "PhasePoly", "RationalComplex",
]

__version__ = "0.1.0"
