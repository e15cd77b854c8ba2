"""Audited quantities: conserved mass, energies, dissipation rates, the
cumulative energy-budget residual, separation bounds, velocity norms, and the
mixed space-time integrability monitors.

The budget residual tracks R(t) = E_total(t) + int_0^t (D_visc + D_chem) -
E_total(0) with trapezoidal accumulation between records; for the exact
dynamics R vanishes identically, for the first-order scheme it must shrink
linearly under time-step refinement.  That refinement study is what
``energy_audit`` quantifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import BadExponents, InsufficientData
from .grid_ops import (ScalarField, VectorField, avg_to_xface, avg_to_yface,
                       div_arrays, grad_x, grad_y, hminus1_norm, l2_norm,
                       linf_norm)
from .materials import PhysicalParams
from .navier_stokes import grad_v_lp, grad_v_sq, speed_lp, sym_grad_sq

CSV_COLUMNS = ("t", "mass", "E_kin", "E_free", "E_total", "D_visc", "D_chem",
               "R_energy", "phi_min", "phi_max", "v_L2", "v_Linf",
               "grad_v_Lr", "dt_phi_Hminus1")


@dataclass
class DiagnosticsRecord:
    """One audited sample; field order is the diagnostics CSV column order."""

    t: float
    mass: float
    E_kin: float
    E_free: float
    E_total: float
    D_visc: float
    D_chem: float
    R_energy: float
    phi_min: float
    phi_max: float
    v_L2: float
    v_Linf: float
    grad_v_Lr: float
    dt_phi_Hminus1: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


class DiagnosticsAccumulator:
    """Carries the running dissipation integral between records.

    ``replay`` reconstructs the accumulator from previously written rows with
    the identical floating-point update sequence, so a restarted trajectory
    reproduces the uninterrupted one bitwise.
    """

    def __init__(self):
        self.E0 = None
        self.cum_diss = 0.0
        self.prev_t = None
        self.prev_D = None

    def update(self, t: float, D_total: float, E_total: float) -> float:
        if self.E0 is None:
            self.E0 = E_total
        elif t > self.prev_t:
            self.cum_diss += 0.5 * (t - self.prev_t) * (self.prev_D + D_total)
        self.prev_t = t
        self.prev_D = D_total
        return E_total + self.cum_diss - self.E0

    def replay(self, rows) -> None:
        for row in rows:
            self.update(row["t"], row["D_visc"] + row["D_chem"], row["E_total"])


def kinetic_energy(v: VectorField, rho_cc: np.ndarray) -> float:
    grid = v.grid
    e = 0.5 * ((avg_to_xface(rho_cc, grid) * v.u * v.u).sum()
               + (avg_to_yface(rho_cc, grid) * v.w * v.w).sum())
    return float(e * grid.cell_area)


def free_energy(phi: ScalarField, P: PhysicalParams) -> float:
    """int ( a(phi) |grad phi|^2 / 2 + psi(phi) ), face-quadrature gradients."""
    grid = phi.grid
    a_cc = P.a_of(phi.values)
    gx = grad_x(phi.values, grid)
    gy = grad_y(phi.values, grid)
    grad_part = 0.5 * ((avg_to_xface(a_cc, grid) * gx * gx).sum()
                       + (avg_to_yface(a_cc, grid) * gy * gy).sum())
    bulk = P.psi(phi.values).sum()
    return float((grad_part + bulk) * grid.cell_area)


def chemical_dissipation(phi: ScalarField, mu: ScalarField,
                         P: PhysicalParams) -> float:
    """int b(phi) |grad mu|^2."""
    grid = phi.grid
    b_cc = P.b_of(phi.values)
    gx = grad_x(mu.values, grid)
    gy = grad_y(mu.values, grid)
    val = ((avg_to_xface(b_cc, grid) * gx * gx).sum()
           + (avg_to_yface(b_cc, grid) * gy * gy).sum())
    return float(val * grid.cell_area)


def phase_rate_dual_norm(phi: ScalarField, mu: ScalarField, v: VectorField,
                         P: PhysicalParams) -> float:
    """(H^1)' norm of the instantaneous phase-change rate.

    The rate div(b grad mu) - div(v phi) is assembled from conservative
    fluxes, so it is mean-free up to rounding; the residual mean is removed
    before the dual-norm Poisson solve.
    """
    grid = phi.grid
    b_cc = P.b_of(phi.values)
    rate = div_arrays(avg_to_xface(b_cc, grid) * grad_x(mu.values, grid),
                      avg_to_yface(b_cc, grid) * grad_y(mu.values, grid), grid)
    rate = rate - div_arrays(v.u * avg_to_xface(phi.values, grid),
                             v.w * avg_to_yface(phi.values, grid), grid)
    rate = rate - rate.mean()
    field = ScalarField(grid, rate)
    if l2_norm(field) == 0.0:
        return 0.0
    return hminus1_norm(field)


def record(phi: ScalarField, mu: ScalarField, v: VectorField, p: ScalarField,
           t: float, P: PhysicalParams, acc: DiagnosticsAccumulator,
           grad_v_r: float = 2.0) -> DiagnosticsRecord:
    """Compute one diagnostics sample and advance the budget accumulator."""
    rho_cc = P.rho_of(phi.values)
    nu_cc = P.nu_of(phi.values)
    E_kin = kinetic_energy(v, rho_cc)
    E_free = free_energy(phi, P)
    E_total = E_kin + E_free
    D_visc = float((2.0 * nu_cc * sym_grad_sq(v).values).sum()
                   * phi.grid.cell_area)
    D_chem = chemical_dissipation(phi, mu, P)
    R = acc.update(t, D_visc + D_chem, E_total)
    return DiagnosticsRecord(
        t=t,
        mass=phi.integral(),
        E_kin=E_kin,
        E_free=E_free,
        E_total=E_total,
        D_visc=D_visc,
        D_chem=D_chem,
        R_energy=R,
        phi_min=float(phi.values.min()),
        phi_max=float(phi.values.max()),
        v_L2=l2_norm(v),
        v_Linf=linf_norm(v),
        grad_v_Lr=grad_v_lp(v, grad_v_r),
        dt_phi_Hminus1=phase_rate_dual_norm(phi, mu, v, P),
    )


# ---------------------------------------------------------------------------
# mixed-norm regularity monitor
# ---------------------------------------------------------------------------

@dataclass
class RegularityReport:
    """Mixed L^q_t L^r_x monitors of the velocity gradient and velocity.

    ``index_lhs`` is 5/q + 6/r; the pair is flagged satisfied when it equals
    5 (within rounding), the scale-critical balance for energy conservation.
    Conjugate exponents degenerate to sup norms when q or r equals 2.
    Diagnostic only: no pass/fail gate is attached to simulations.
    """

    q: float
    r: float
    I1: float
    I2: float
    index_lhs: float
    index_satisfied: bool
    sample_dt_max: float


def regularity_monitor(samples, q: float, r: float) -> RegularityReport:
    """Evaluate the monitors over a trajectory of (t, velocity) samples.

    Args:
        samples: sequence of ``(t, VectorField)`` pairs, increasing in t.
        q, r: time/space exponents, both >= 2.
    """
    if q < 2 or r < 2:
        raise BadExponents(f"exponents must satisfy q, r >= 2, got ({q}, {r})")
    if len(samples) < 2:
        raise InsufficientData("regularity monitor needs >= 2 records")
    ts = np.array([t for t, _ in samples], dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise InsufficientData("trajectory times must be strictly increasing")

    grad_norms = np.array([grad_v_lp(v, r) for _, v in samples])
    s_exp = np.inf if r == 2 else 2.0 * r / (r - 2.0)
    speed_norms = np.array([speed_lp(v, s_exp) for _, v in samples])

    I1 = _time_lq(ts, grad_norms, q)
    sigma = np.inf if q == 2 else 2.0 * q / (q - 2.0)
    I2 = _time_lq(ts, speed_norms, sigma)
    index_lhs = 5.0 / q + 6.0 / r
    return RegularityReport(
        q=q, r=r, I1=I1, I2=I2, index_lhs=index_lhs,
        index_satisfied=bool(abs(index_lhs - 5.0) <= 1e-12),
        sample_dt_max=float(np.diff(ts).max()),
    )


def _time_lq(ts, values, q):
    if q == np.inf:
        return float(values.max())
    integrand = values ** q
    return float(np.trapezoid(integrand, ts)) ** (1.0 / q)


# ---------------------------------------------------------------------------
# energy budget refinement study
# ---------------------------------------------------------------------------

@dataclass
class EnergyAuditReport:
    dts: tuple
    final_abs_R: tuple
    max_abs_R: tuple
    order_estimate: float


def energy_audit(runs) -> EnergyAuditReport:
    """Fit the refinement order of the budget residual across runs.

    Args:
        runs: sequence of ``(dt, records)`` pairs from otherwise identical
            trajectories.

    Raises:
        InsufficientData: fewer than two runs, or empty trajectories.
    """
    if len(runs) < 2:
        raise InsufficientData("energy audit needs runs at >= 2 time steps")
    if len({float(dt) for dt, _ in runs}) != len(runs):
        raise InsufficientData("energy audit needs distinct time steps")
    dts, final_R, max_R = [], [], []
    for dt, recs in sorted(runs, key=lambda item: -item[0]):
        if len(recs) < 2:
            raise InsufficientData("each audited run needs >= 2 records")
        dts.append(float(dt))
        final_R.append(abs(recs[-1].R_energy))
        max_R.append(max(abs(rec.R_energy) for rec in recs))
    if min(final_R) <= 0.0:
        raise InsufficientData("budget residual vanished; nothing to fit")
    slope = np.polyfit(np.log(dts), np.log(final_R), 1)[0]
    return EnergyAuditReport(
        dts=tuple(dts), final_abs_R=tuple(final_R), max_abs_R=tuple(max_R),
        order_estimate=float(slope),
    )


def korn_gap(v: VectorField) -> float:
    """sqrt(2)||Dv|| - ||grad v||; nonnegative up to rounding."""
    area = v.grid.cell_area
    d_norm = math.sqrt(float(sym_grad_sq(v).values.sum() * area))
    g_norm = math.sqrt(float(grad_v_sq(v).values.sum() * area))
    return math.sqrt(2.0) * d_norm - g_norm
