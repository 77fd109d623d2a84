"""Structure-preserving mixed finite elements for 1D port-Hamiltonian systems.

Assembly of the mixed scheme and a standard finite-element comparator,
stability certificates, LQ design, implicit-midpoint simulation and a
suite of independent oracle checks.
"""

from .assembly import DiscreteModel, FemModel, assemble, assemble_fem, assemble_mfem
from .lqr import gain_sweep, lqr_design, solve_care
from .model import Mesh, ParamProfile, SystemSpec, make_piezo_preset, make_wave_preset
from .simulate import fit_decay_rate, multiplier_trace, simulate, smooth_initial_state
from .stability import (continuous_certificate, discrete_certificate, large_n_search,
                        spectral_abscissa, stability_sweep)

__all__ = [
    "DiscreteModel", "FemModel", "Mesh", "ParamProfile", "SystemSpec",
    "assemble", "assemble_fem", "assemble_mfem", "continuous_certificate",
    "discrete_certificate", "fit_decay_rate", "gain_sweep", "large_n_search",
    "lqr_design", "make_piezo_preset", "make_wave_preset", "multiplier_trace",
    "simulate", "smooth_initial_state", "solve_care", "spectral_abscissa",
    "stability_sweep",
]
__version__ = "0.1.0"
