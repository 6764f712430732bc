"""Spectral simulation and verification of a viscous non-isothermal nonlocal Cahn-Hilliard system."""

from .diagnostics import EnergyLedger, energy_eps, lyapunov_E
from .dynamics import Params, State, recover_mu, rescaled_viscous_ch_step, step_imex
from .kernel import Kernel, build_kernel
from .oracle import oracle_rk4
from .potential import Potential, certify_H2_to_H5
from .spectral import SpectralSpace

__all__ = [
    "EnergyLedger",
    "Kernel",
    "Params",
    "Potential",
    "SpectralSpace",
    "State",
    "build_kernel",
    "certify_H2_to_H5",
    "energy_eps",
    "lyapunov_E",
    "oracle_rk4",
    "recover_mu",
    "rescaled_viscous_ch_step",
    "step_imex",
]
