"""aggsim: structure-preserving 2D two-phase flow simulator with audits.

A coupled phase-field / incompressible-flow solver for two fluids with
unmatched densities on a staggered rectangular grid, plus the diagnostics
layer that numerically audits the model's structural laws: mass
conservation, the energy balance, strict separation of the phase field from
the pure phases, stability of local free-energy minimizers, and power-law
decay toward equilibrium.
"""

from .cahn_hilliard import ChSolveParams, ch_step, chemical_potential
from .coupled import (RunConfig, RunResult, State, initial_state, run,
                      spinodal_initial_phi, step)
from .diagnostics import (DiagnosticsAccumulator, DiagnosticsRecord,
                          EnergyAuditReport, RegularityReport, energy_audit,
                          record, regularity_monitor)
from .equilibrium import (DecayFitResult, LyapunovReport, SteadyState,
                          decay_fit, decay_fit_samples, find_minimizer,
                          lyapunov_experiment, station_residual,
                          theta_from_alpha)
from .errors import AggError
from .grid_ops import (GridSpec, ScalarField, VectorField, div_face, grad_cc,
                       laplacian, norm, solve_poisson)
from .materials import PhysicalParams
from .navier_stokes import flux_J, momentum_predict, project, sym_grad_sq

__version__ = "0.1.0"

__all__ = [
    "AggError", "ChSolveParams", "DecayFitResult", "DiagnosticsAccumulator",
    "DiagnosticsRecord", "EnergyAuditReport", "GridSpec", "LyapunovReport",
    "PhysicalParams", "RegularityReport", "RunConfig", "RunResult",
    "ScalarField", "State", "SteadyState", "VectorField", "ch_step",
    "chemical_potential", "decay_fit", "decay_fit_samples", "div_face",
    "energy_audit", "find_minimizer", "flux_J", "grad_cc", "initial_state",
    "laplacian", "lyapunov_experiment", "momentum_predict", "norm", "project",
    "record", "regularity_monitor", "run", "solve_poisson",
    "spinodal_initial_phi", "station_residual", "step", "sym_grad_sq",
    "theta_from_alpha",
]
