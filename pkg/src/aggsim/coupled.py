"""Full coupled time step (phase field, then momentum, then projection) and
the fixed-step trajectory driver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cahn_hilliard import ChSolveParams, ch_step, chemical_potential
from .diagnostics import DiagnosticsAccumulator, DiagnosticsRecord, record
from .errors import NumericalError, RunAborted, ValidationError
from .grid_ops import (GridSpec, ScalarField, VectorField, div_arrays,
                       l2_norm, linf_norm, zeros_cc, zeros_face)
from .materials import PhysicalParams
from .navier_stokes import momentum_predict, project

DIV_TOL = 1e-9
MASS_TOL = 1e-12


@dataclass
class State:
    """One trajectory point: time, velocity, phase field, chemical potential,
    pressure, and the step counter."""

    t: float
    v: VectorField
    phi: ScalarField
    mu: ScalarField
    p: ScalarField
    step_index: int = 0

    def validate(self, mean_phi: float | None = None) -> None:
        g = self.phi.grid
        div = div_arrays(self.v.u, self.v.w, g)
        div_norm = float(np.sqrt((div * div).sum() * g.cell_area))
        scale = max(1.0, l2_norm(self.v)) / min(g.hx, g.hy)
        if div_norm > DIV_TOL * scale:
            raise ValidationError(
                f"state at step {self.step_index}: ||div v|| = {div_norm:.3e} "
                f"exceeds the scaled tolerance"
            )
        if linf_norm(self.phi) >= 1.0:
            raise ValidationError(
                f"state at step {self.step_index}: phase field touches +-1"
            )
        if mean_phi is not None and abs(self.phi.mean() - mean_phi) > MASS_TOL:
            raise ValidationError(
                f"state at step {self.step_index}: mean drifted to "
                f"{self.phi.mean()!r} (target {mean_phi!r})"
            )

    def copy(self) -> "State":
        return State(self.t, self.v.copy(), self.phi.copy(), self.mu.copy(),
                     self.p.copy(), self.step_index)


def initial_state(grid: GridSpec, P: PhysicalParams, phi0: ScalarField,
                  v0: VectorField | None = None) -> State:
    """Assemble a valid state at t = 0 (chemical potential from phi0)."""
    v0 = v0 or zeros_face(grid)
    mu0 = chemical_potential(phi0, P)
    return State(0.0, v0, phi0, mu0, zeros_cc(grid), 0)


@dataclass
class RunConfig:
    """Everything a trajectory needs besides its initial state."""

    grid: GridSpec
    params: PhysicalParams
    dt: float
    t_end: float
    diag_every: int = 1
    snapshot_every: int = 0          # 0: final state only
    ordering: str = "ch_first"       # or "ns_first" (audit comparison)
    ch_solve: ChSolveParams = field(default_factory=ChSolveParams)
    poisson_tol: float = 1e-10
    viscous_tol: float = 1e-10
    grad_v_r: float = 2.0
    experiment_mode: str = "generic"
    seed: int = 0
    mean_phi: float = 0.0
    noise_amp: float = 1e-2
    force_zero_J: bool = False       # audit switch: run with the J path inert

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.t_end < 0:
            raise ValidationError("t_end must be nonnegative")
        if self.t_end > 0 and self.t_end < self.dt:
            raise ValidationError("t_end must be at least dt")
        if self.ordering not in ("ch_first", "ns_first"):
            raise ValidationError(f"unknown ordering {self.ordering!r}")
        if self.diag_every < 1 or self.snapshot_every < 0:
            raise ValidationError("diag_every >= 1 and snapshot_every >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def step(s: State, cfg: RunConfig) -> State:
    """Advance one full coupled step.

    Default ordering updates the phase field first so the capillary force is
    built from the new (phi, mu) pair; the alternative ordering reuses the
    old pair and is available for the energy-budget comparison.  Solver
    failures are re-raised tagged with the step index they occurred in.
    """
    P = cfg.params
    try:
        if cfg.ordering == "ch_first":
            phi1, mu1 = ch_step(s.phi, s.v, cfg.dt, P, cfg.ch_solve)
            v_star = momentum_predict(s.v, s.phi, s.mu, s.p, phi1, mu1,
                                      cfg.dt, P, tol=cfg.viscous_tol,
                                      force_zero_J=cfg.force_zero_J)
            v1, p1 = project(v_star,
                             ScalarField(s.phi.grid, P.rho_of(phi1.values)),
                             s.p, cfg.dt, tol=cfg.poisson_tol)
        else:
            v_star = momentum_predict(s.v, s.phi, s.mu, s.p, s.phi, s.mu,
                                      cfg.dt, P, tol=cfg.viscous_tol,
                                      force_zero_J=cfg.force_zero_J)
            v1, p1 = project(v_star,
                             ScalarField(s.phi.grid, P.rho_of(s.phi.values)),
                             s.p, cfg.dt, tol=cfg.poisson_tol)
            phi1, mu1 = ch_step(s.phi, v1, cfg.dt, P, cfg.ch_solve)
    except (NumericalError, ValidationError) as exc:
        raise type(exc)(f"step {s.step_index + 1}: {exc}") from exc
    return State(s.t + cfg.dt, v1, phi1, mu1, p1, s.step_index + 1)


@dataclass
class RunResult:
    final: State
    records: list
    snapshots: list          # (step_index, State) pairs kept in memory
    min_separation: float
    failed: bool = False
    failure: str | None = None


def run(cfg: RunConfig, initial: State,
        acc: DiagnosticsAccumulator | None = None,
        on_record=None, on_snapshot=None,
        validate_every: int = 1) -> RunResult:
    """Fixed-step march to t_end with periodic diagnostics and snapshots.

    Deterministic for a fixed config and initial state.  On a numerical
    failure the partial outputs are flushed inside a RunAborted exception
    whose ``partial`` attribute is this same RunResult structure with a
    failure marker appended as the last record.
    """
    P = cfg.params
    acc = acc or DiagnosticsAccumulator()
    mean_phi = initial.phi.mean()
    initial.validate(mean_phi)
    records: list[DiagnosticsRecord] = []
    snapshots: list = []
    s = initial
    min_sep = 1.0 - linf_norm(s.phi)

    def emit_record(state):
        rec = record(state.phi, state.mu, state.v, state.p, state.t, P, acc,
                     grad_v_r=cfg.grad_v_r)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    def emit_snapshot(state):
        snapshots.append((state.step_index, state.copy()))
        if on_snapshot is not None:
            on_snapshot(state)

    if s.step_index == 0:
        emit_record(s)
    n_total = cfg.n_steps
    try:
        while s.step_index < n_total:
            s = step(s, cfg)
            min_sep = min(min_sep, 1.0 - linf_norm(s.phi))
            if s.step_index % validate_every == 0 or s.step_index == n_total:
                s.validate(mean_phi)
            if s.step_index % cfg.diag_every == 0 or s.step_index == n_total:
                emit_record(s)
            if cfg.snapshot_every and s.step_index % cfg.snapshot_every == 0:
                emit_snapshot(s)
    except (NumericalError, ValidationError) as exc:
        marker = DiagnosticsRecord(*([float("nan")] * 14))
        marker.t = s.t
        records.append(marker)
        if on_record is not None:
            on_record(marker)
        partial = RunResult(s, records, snapshots, min_sep, failed=True,
                            failure=str(exc))
        raise RunAborted(partial.failure, cause=exc, partial=partial) from exc
    emit_snapshot(s)
    return RunResult(s, records, snapshots, min_sep)


def spinodal_initial_phi(grid: GridSpec, mean_phi: float, noise_amp: float,
                         seed: int) -> ScalarField:
    """Seeded small-amplitude noise around a uniform mixture, mean-exact."""
    if abs(mean_phi) + 2.0 * abs(noise_amp) >= 1.0:
        raise ValidationError(
            "mean_phi and noise_amp leave no room inside (-1, 1)"
        )
    rng = np.random.default_rng(seed)
    vals = noise_amp * (2.0 * rng.random(grid.shape_cc) - 1.0)
    vals = vals - vals.mean() + mean_phi
    return ScalarField(grid, vals)
