"""Full coupled step and trajectory driver."""

import numpy as np
import pytest

from aggsim.coupled import (RunConfig, State, initial_state, run,
                            spinodal_initial_phi, step)
from aggsim.errors import RunAborted
from aggsim.grid_ops import (GridSpec, ScalarField, l2_norm, zeros_cc,
                             zeros_face)
from aggsim.materials import PhysicalParams


def make_cfg(grid=None, dt=1e-3, t_end=5e-3, **kw):
    grid = grid or GridSpec(16, 16)
    P = kw.pop("params", PhysicalParams(rho1=3.0, rho2=1.0, theta=1.0,
                                        theta0=2.0))
    return RunConfig(grid=grid, params=P, dt=dt, t_end=t_end, **kw)


def state_allclose(a, b, atol=0.0):
    return (np.array_equal(a.phi.values, b.phi.values) if atol == 0.0 else
            np.allclose(a.phi.values, b.phi.values, atol=atol)) \
        and np.array_equal(a.v.u, b.v.u) and np.array_equal(a.v.w, b.v.w) \
        and np.array_equal(a.p.values, b.p.values)


class TestStep:
    def test_flat_equilibrium_fixed_point(self):
        cfg = make_cfg()
        g = cfg.grid
        phi0 = ScalarField(g, np.full(g.shape_cc, 0.2))
        s0 = initial_state(g, cfg.params, phi0)
        s1 = step(s0, cfg)
        assert np.allclose(s1.phi.values, 0.2, atol=1e-12)
        assert l2_norm(s1.v) <= 1e-10
        assert s1.t == pytest.approx(cfg.dt)
        assert s1.step_index == 1

    def test_model_h_limit_bitwise(self):
        # matched densities: the density-mismatch flux path must be inert
        P = PhysicalParams(rho1=2.0, rho2=2.0, theta=1.0, theta0=2.0)
        g = GridSpec(16, 16)
        phi0 = spinodal_initial_phi(g, 0.0, 1e-2, seed=7)
        runs = []
        for force_zero in (False, True):
            cfg = make_cfg(grid=g, params=P, dt=5e-4, t_end=5e-3,
                           force_zero_J=force_zero)
            result = run(cfg, initial_state(g, P, phi0.copy()))
            runs.append(result.final)
        assert state_allclose(runs[0], runs[1])

    def test_richardson_local_order(self):
        # smooth data and dt below the stiffest-mode scale: the one-step
        # vs two-half-steps gap shrinks at second order
        P = PhysicalParams(rho1=3.0, rho2=1.0, theta=1.0, theta0=2.0)
        g = GridSpec(16, 16, 2 * np.pi, 2 * np.pi)
        x, y = g.cell_centers()
        phi0 = ScalarField(g, 0.2 * np.sin(x) * np.cos(y) + 0.1)
        s0 = initial_state(g, P, phi0)

        def gap(dt):
            one = step(s0, make_cfg(grid=g, dt=dt, t_end=dt, params=P))
            half_cfg = make_cfg(grid=g, dt=dt / 2, t_end=dt, params=P)
            two = step(step(s0, half_cfg), half_cfg)
            return l2_norm(ScalarField(g, one.phi.values - two.phi.values))

        g1 = gap(4e-4)
        g2 = gap(2e-4)
        assert g1 / g2 == pytest.approx(4.0, rel=0.3)  # O(dt^2) local gap


class TestRun:
    def test_noise_bounds_validated(self):
        from aggsim.errors import ValidationError
        with pytest.raises(ValidationError):
            spinodal_initial_phi(GridSpec(8, 8), 0.9, 0.2, seed=0)

    def test_zero_horizon(self):
        cfg = make_cfg(t_end=0.0)
        g = cfg.grid
        s0 = initial_state(g, cfg.params, spinodal_initial_phi(g, 0.0, 1e-2, 1))
        result = run(cfg, s0)
        assert result.final is s0
        assert len(result.records) == 1

    def test_mass_and_energy_on_spinodal(self):
        cfg = make_cfg(dt=5e-4, t_end=2.5e-2)
        g = cfg.grid
        s0 = initial_state(g, cfg.params,
                           spinodal_initial_phi(g, 0.0, 1e-2, seed=11))
        result = run(cfg, s0)
        recs = result.records
        masses = [r.mass for r in recs]
        assert max(abs(m - masses[0]) for m in masses) <= 1e-12
        # energy never exceeds its start by more than the audited residual
        for r in recs:
            assert r.E_total <= recs[0].E_total + abs(r.R_energy) + 1e-12
        assert result.min_separation > 1e-3

    def test_determinism(self):
        cfg = make_cfg(dt=1e-3, t_end=5e-3)
        g = cfg.grid
        phi0 = spinodal_initial_phi(g, 0.0, 1e-2, seed=5)
        r1 = run(cfg, initial_state(g, cfg.params, phi0.copy()))
        r2 = run(cfg, initial_state(g, cfg.params, phi0.copy()))
        assert state_allclose(r1.final, r2.final)
        assert [rec.as_row() for rec in r1.records] \
            == [rec.as_row() for rec in r2.records]

    def test_snapshot_restart_identical(self):
        cfg = make_cfg(dt=1e-3, t_end=6e-3, snapshot_every=3)
        g = cfg.grid
        phi0 = spinodal_initial_phi(g, 0.0, 1e-2, seed=9)
        full = run(cfg, initial_state(g, cfg.params, phi0.copy()))
        # restart from the mid-run snapshot kept in memory
        mid_idx, mid_state = full.snapshots[0]
        assert mid_idx == 3
        from aggsim.diagnostics import DiagnosticsAccumulator
        acc = DiagnosticsAccumulator()
        rows = [{"t": r.t, "D_visc": r.D_visc, "D_chem": r.D_chem,
                 "E_total": r.E_total} for r in full.records
                if r.t <= mid_state.t]
        acc.replay(rows)
        resumed = run(cfg, mid_state.copy(), acc=acc)
        assert state_allclose(full.final, resumed.final)
        tail_full = [r.as_row() for r in full.records if r.t > mid_state.t]
        tail_res = [r.as_row() for r in resumed.records]
        assert tail_full == tail_res

    def test_failure_flushes_marker(self):
        # a field already at the clamp aborts the phase solve immediately
        cfg = make_cfg(dt=1e-3, t_end=5e-3)
        g = cfg.grid
        vals = np.full(g.shape_cc, 0.0)
        vals[0, 0] = 0.999999999
        vals -= vals.mean()
        phi0 = ScalarField(g, vals * (0.9999999999 / np.abs(vals).max()))
        s0 = State(0.0, zeros_face(g),
                   phi0, zeros_cc(g), zeros_cc(g), 0)
        with pytest.raises(RunAborted) as err:
            run(cfg, s0)
        partial = err.value.partial
        assert partial.failed
        assert np.isnan(partial.records[-1].mass)

    def test_ordering_switch_runs(self):
        cfg = make_cfg(dt=1e-3, t_end=3e-3, ordering="ns_first")
        g = cfg.grid
        s0 = initial_state(g, cfg.params,
                           spinodal_initial_phi(g, 0.0, 1e-2, seed=2))
        result = run(cfg, s0)
        assert result.final.step_index == 3

    def test_wall_spinodal_with_density_contrast(self):
        # wall-bounded coarsening with rho contrast: mass, budget, and the
        # Korn bound hold on every recorded state
        from aggsim.diagnostics import korn_gap
        P = PhysicalParams(rho1=3.0, rho2=1.0, nu1=1.0, nu2=0.5,
                           theta=1.0, theta0=2.0, a_coeffs=(0.01,))
        g = GridSpec(16, 16, 1.0, 1.0, "wall", "wall")
        cfg = make_cfg(grid=g, params=P, dt=1e-3, t_end=3e-2,
                       snapshot_every=10)
        s0 = initial_state(g, P, spinodal_initial_phi(g, 0.0, 1e-2, seed=12))
        result = run(cfg, s0)
        recs = result.records
        assert abs(recs[-1].mass - recs[0].mass) <= 1e-12
        assert recs[-1].E_total <= recs[0].E_total + abs(recs[-1].R_energy) \
            + 1e-12
        for _, snap in result.snapshots:
            assert korn_gap(snap.v) >= -1e-12

    def test_mixed_bc_channel(self):
        P = PhysicalParams(rho1=2.0, rho2=1.0, theta=1.0, theta0=2.0,
                           a_coeffs=(0.01,))
        g = GridSpec(16, 12, 1.0, 1.0, "periodic", "wall")
        cfg = make_cfg(grid=g, params=P, dt=1e-3, t_end=5e-3)
        s0 = initial_state(g, P, spinodal_initial_phi(g, 0.0, 1e-2, seed=13))
        result = run(cfg, s0)
        assert result.final.step_index == 5
        assert abs(result.records[-1].mass - result.records[0].mass) <= 1e-12

    def test_variable_coefficients_wall(self):
        # polynomial a and b exercise the gradient-term Jacobian and the
        # Krylov fallback on a wall-bounded grid
        P = PhysicalParams(rho1=2.0, rho2=1.0, theta=1.0, theta0=2.0,
                           a_coeffs=(0.01, 0.002, 0.005),
                           b_coeffs=(1.0, -0.3))
        g = GridSpec(16, 16, 1.0, 1.0, "wall", "wall")
        cfg = make_cfg(grid=g, params=P, dt=5e-4, t_end=5e-3)
        s0 = initial_state(g, P, spinodal_initial_phi(g, 0.05, 1e-2, seed=4))
        result = run(cfg, s0)
        recs = result.records
        assert abs(recs[-1].mass - recs[0].mass) <= 1e-12
        assert recs[-1].E_total <= recs[0].E_total + abs(recs[-1].R_energy) \
            + 1e-12
