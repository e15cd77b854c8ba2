"""Constrained energy minimization, stability experiments, and decay fitting.

Local minimizers of the free energy under the mass constraint are found by
integrating the pure phase-field gradient flow (zero velocity) with an
adaptively growing time step; stationarity is measured by the constrained
first-variation residual.  The stability experiment perturbs a minimizer
with fixed, reproducible velocity/phase patterns and monitors the deviation
along a coupled run.  Decay exponents are fitted on log(signal) versus
log(1 + t); the fitted power alpha maps to the exponent parameter
theta = alpha / (1 + 2 alpha), which lands in (0, 1/2) exactly when
alpha > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cahn_hilliard import ChSolveParams, ch_step, chemical_potential
from .coupled import RunConfig, RunResult, State, initial_state
from .diagnostics import DiagnosticsAccumulator, free_energy
from .errors import (DegenerateWindow, InsufficientData, NewtonDiverged,
                     NotConverged, PerturbationTooLarge, SeparationViolated,
                     ValidationError)
from .grid_ops import (GridSpec, ScalarField, VectorField, grad_cc, h1_norm,
                       h2proxy_norm, l2_norm, linf_norm, zeros_face)
from .materials import PhysicalParams


@dataclass
class SteadyState:
    """A constrained critical point of the free energy.

    ``mu_const`` is the Lagrange multiplier of the mass constraint: the
    constant value the chemical potential takes at stationarity.
    """

    phi_star: ScalarField
    m: float
    E_free_value: float
    station_residual_L2: float
    mu_const: float


@dataclass
class LyapunovReport:
    eps: float
    eta1: float
    eta2: float
    sup_H2_dev: float          # H2-proxy norm (Laplacian seminorm variant)
    sup_v_L2: float
    passed: bool
    escape_time: float | None
    T: float


@dataclass
class DecayFitResult:
    alpha_hat: float
    theta_hat: float
    r_squared: float
    window: tuple


def station_residual(psi: ScalarField, P: PhysicalParams
                     ) -> tuple[ScalarField, float, float]:
    """Residual of the constrained stationarity equation at psi.

    Returns the mean-free part of the first variation, its L2 norm, and the
    mean (the Lagrange multiplier estimate).
    """
    G = chemical_potential(psi, P)
    mu_const = G.mean()
    residual = ScalarField(psi.grid, G.values - mu_const)
    return residual, l2_norm(residual), float(mu_const)


def find_minimizer(seed: ScalarField, P: PhysicalParams, tol: float = 1e-8,
                   max_T: float = 1e6, dt0: float = 1e-3,
                   dt_max: float = 256.0,
                   solve: ChSolveParams | None = None,
                   energy_audit_rtol: float = 1e-10) -> SteadyState:
    """Relax a seed to a local free-energy minimizer at fixed mean.

    Integrates the conservative phase-field flow with zero velocity, doubling
    the step while the implicit solve converges and the energy decreases
    (within the audit tolerance), halving it otherwise.  Stops when both the
    chemical-potential gradient and the stationarity residual fall below
    ``tol``.

    Raises:
        NotConverged: max_T of flow time elapsed first.
    """
    solve = solve or ChSolveParams()
    grid = seed.grid
    if linf_norm(seed) > 1.0 - P.sep_guard:
        raise SeparationViolated("seed is inside the separation guard")
    v0 = zeros_face(grid)
    phi = seed.copy()
    energy = free_energy(phi, P)
    audit_tol = energy_audit_rtol * max(abs(energy), 1e-8)
    t, dt = 0.0, dt0
    dt_min = dt0 * 2.0**-20
    res_l2 = float("inf")
    while t < max_T:
        try:
            phi_new, mu_new = ch_step(phi, v0, dt, P, solve)
        except (NewtonDiverged, SeparationViolated):
            dt *= 0.25
            if dt < dt_min:
                raise NotConverged("gradient flow step collapsed below dt floor")
            continue
        energy_new = free_energy(phi_new, P)
        if energy_new > energy + audit_tol:
            dt *= 0.25
            if dt < dt_min:
                raise NotConverged("gradient flow stalled on an energy increase")
            continue
        t += dt
        phi, energy = phi_new, energy_new
        grad_mu = l2_norm(grad_cc(mu_new))
        _, res_l2, mu_const = station_residual(phi, P)
        if grad_mu <= tol and res_l2 <= tol:
            return SteadyState(phi, phi.mean(), energy, res_l2, mu_const)
        dt = min(dt * 2.0, dt_max)
    raise NotConverged(
        f"no stationary point within flow time {max_T:g} "
        f"(last residual {res_l2:.3e})"
    )


# ---------------------------------------------------------------------------
# reproducible perturbation patterns
# ---------------------------------------------------------------------------

def _window(grid: GridSpec, x, y):
    """Polynomial window vanishing (with slope) on wall boundaries."""
    wx = (x * (grid.Lx - x) / (0.5 * grid.Lx) ** 2) ** 2
    wy = (y * (grid.Ly - y) / (0.5 * grid.Ly) ** 2) ** 2
    return wx * wy


def phase_bump(grid: GridSpec, seed: int = 0) -> ScalarField:
    """Fixed smooth mean-zero bump pattern for phase perturbations."""
    rng = np.random.default_rng(seed)
    cx = grid.Lx * (0.35 + 0.3 * rng.random())
    cy = grid.Ly * (0.35 + 0.3 * rng.random())
    sig = 0.12 * min(grid.Lx, grid.Ly)
    x, y = grid.cell_centers()
    vals = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sig**2))
    vals *= _window(grid, x, y)
    vals -= vals.mean()
    return ScalarField(grid, vals)


def solenoidal_bump(grid: GridSpec, seed: int = 0) -> VectorField:
    """Exactly divergence-free velocity pattern from a corner streamfunction.

    The streamfunction is a windowed Gaussian sampled at cell corners; taking
    its discrete curl makes div_face vanish identically, and the window's
    zero boundary values make the wall normal components exactly zero.
    """
    rng = np.random.default_rng(seed + 1)
    cx = grid.Lx * (0.35 + 0.3 * rng.random())
    cy = grid.Ly * (0.35 + 0.3 * rng.random())
    sig = 0.15 * min(grid.Lx, grid.Ly)
    nkx = grid.nx if grid.periodic_x else grid.nx + 1
    nky = grid.ny if grid.periodic_y else grid.ny + 1
    xk = np.arange(nkx) * grid.hx
    yk = np.arange(nky) * grid.hy
    X, Y = np.meshgrid(xk, yk, indexing="ij")
    psi = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sig**2))
    psi *= _window(grid, X, Y)
    # u = d(psi)/dy on x-faces, w = -d(psi)/dx on y-faces: discrete curl
    if grid.periodic_y:
        u = (np.roll(psi, -1, axis=1) - psi) / grid.hy
    else:
        u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    if grid.periodic_x:
        w = -(np.roll(psi, -1, axis=0) - psi) / grid.hx
    else:
        w = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return VectorField(grid, u, w)


# ---------------------------------------------------------------------------
# stability experiment
# ---------------------------------------------------------------------------

@dataclass
class LyapunovSample:
    t: float
    v_L2: float
    h1_dev: float
    h2proxy_dev: float
    E_total: float
    R_energy: float


LYAPUNOV_COLUMNS = ("t", "v_L2", "h1_dev", "h2proxy_dev", "E_total", "R_energy")


def perturbed_initial_state(ss: SteadyState, eta1: float, eta2: float,
                            cfg: RunConfig) -> State:
    """phi* plus a normalized phase bump, plus a normalized solenoidal kick."""
    grid = ss.phi_star.grid
    P = cfg.params
    phi0_vals = ss.phi_star.values
    if eta2 > 0:
        g = phase_bump(grid, cfg.seed)
        g_vals = g.values / h2proxy_norm(g)
        phi0_vals = phi0_vals + eta2 * g_vals
        phi0_vals = phi0_vals - (phi0_vals.mean() - ss.m)
    if np.abs(phi0_vals).max() > 1.0 - 10.0 * P.sep_guard:
        raise PerturbationTooLarge(
            "perturbed phase field leaves the admissible open interval"
        )
    phi0 = ScalarField(grid, phi0_vals)
    v0 = zeros_face(grid)
    if eta1 > 0:
        V = solenoidal_bump(grid, cfg.seed)
        scale = eta1 / l2_norm(V)
        v0 = VectorField(grid, scale * V.u, scale * V.w)
    return initial_state(grid, P, phi0, v0)


def lyapunov_experiment(ss: SteadyState, eta1: float, eta2: float, eps: float,
                        T: float, cfg: RunConfig
                        ) -> tuple[LyapunovReport, list, RunResult]:
    """Perturb a steady state and monitor the deviation over [0, T].

    Returns the report, the per-record deviation samples, and the raw run
    result (records included) for downstream fits.
    """
    if not (0 <= eta1 < 1 and 0 <= eta2 < 1):
        raise ValidationError("perturbation sizes must lie in [0, 1)")
    cfg = RunConfig(**{**cfg.__dict__, "t_end": T,
                       "experiment_mode": "lyapunov"})
    state0 = perturbed_initial_state(ss, eta1, eta2, cfg)
    samples: list[LyapunovSample] = []
    star = ss.phi_star

    def observe(state, rec):
        dev = ScalarField(star.grid, state.phi.values - star.values)
        samples.append(LyapunovSample(
            t=rec.t, v_L2=l2_norm(state.v), h1_dev=h1_norm(dev),
            h2proxy_dev=h2proxy_norm(dev), E_total=rec.E_total,
            R_energy=rec.R_energy,
        ))

    result = _run_observed(cfg, state0, observe)
    sup_dev = max(s.h2proxy_dev for s in samples)
    sup_v = max(s.v_L2 for s in samples)
    escape = next((s.t for s in samples if s.h2proxy_dev > eps), None)
    report = LyapunovReport(
        eps=eps, eta1=eta1, eta2=eta2, sup_H2_dev=sup_dev, sup_v_L2=sup_v,
        passed=bool(sup_dev <= eps), escape_time=escape, T=T,
    )
    return report, samples, result


def _run_observed(cfg, state0, observe) -> RunResult:
    """Trajectory march that hands each diagnostics record its state."""
    from .coupled import step as coupled_step
    from .diagnostics import record as diag_record

    acc = DiagnosticsAccumulator()
    mean_phi = state0.phi.mean()
    state0.validate(mean_phi)
    s = state0
    records = []
    min_sep = 1.0 - linf_norm(s.phi)

    def emit(state):
        rec = diag_record(state.phi, state.mu, state.v, state.p, state.t,
                          cfg.params, acc, grad_v_r=cfg.grad_v_r)
        records.append(rec)
        observe(state, rec)

    emit(s)
    n_total = cfg.n_steps
    while s.step_index < n_total:
        s = coupled_step(s, cfg)
        min_sep = min(min_sep, 1.0 - linf_norm(s.phi))
        s.validate(mean_phi)
        if s.step_index % cfg.diag_every == 0 or s.step_index == n_total:
            emit(s)
    return RunResult(s, records, [], min_sep)


# ---------------------------------------------------------------------------
# decay-rate fitting
# ---------------------------------------------------------------------------

def decay_fit_samples(ts, ys, window: tuple) -> DecayFitResult:
    """Least squares of log y against log(1 + t) over a time window.

    Raises:
        DegenerateWindow: the signal is nonpositive inside the window
            (equilibrium reached to machine precision; decay is faster than
            any power law).
        InsufficientData: fewer than 10 samples in the window.
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    t_a, t_b = window
    mask = (ts >= t_a) & (ts <= t_b)
    if mask.sum() < 10:
        raise InsufficientData(
            f"window [{t_a:g}, {t_b:g}] holds {int(mask.sum())} samples; need >= 10"
        )
    t_w, y_w = ts[mask], ys[mask]
    if np.any(y_w <= 0.0):
        raise DegenerateWindow(
            "signal hit zero inside the window: super-polynomial decay"
        )
    X = np.log1p(t_w)
    Y = np.log(y_w)
    slope, intercept = np.polyfit(X, Y, 1)
    fitted = slope * X + intercept
    ss_res = float(((Y - fitted) ** 2).sum())
    ss_tot = float(((Y - Y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    alpha = -float(slope)
    return DecayFitResult(
        alpha_hat=alpha,
        theta_hat=theta_from_alpha(alpha),
        r_squared=r2,
        window=(float(t_a), float(t_b)),
    )


def theta_from_alpha(alpha: float) -> float:
    """Invert alpha = theta / (1 - 2 theta); maps (0, inf) onto (0, 1/2)."""
    return alpha / (1.0 + 2.0 * alpha)


def decay_fit(samples, phi_inf: ScalarField, window: tuple) -> DecayFitResult:
    """Fit the decay of ||v|| + ||phi - phi_inf||_H1 along a trajectory.

    Args:
        samples: sequence of (t, State) or LyapunovSample entries.
    """
    ts, ys = [], []
    for item in samples:
        if isinstance(item, LyapunovSample):
            ts.append(item.t)
            ys.append(item.v_L2 + item.h1_dev)
        else:
            t, state = item
            dev = ScalarField(phi_inf.grid, state.phi.values - phi_inf.values)
            ts.append(t)
            ys.append(l2_norm(state.v) + h1_norm(dev))
    return decay_fit_samples(ts, ys, window)
