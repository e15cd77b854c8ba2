"""Command-line entry points.

Subcommands: run, equilibrate, lyapunov, decay-fit, energy-audit, regularity.
Exit codes: 0 success, 1 validation/configuration error, 2 numerical failure
(including a failed stability experiment).  Errors additionally emit one
machine-readable line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import figures
from .config import build_run_config, config_hash, parse_config_text
from .coupled import RunConfig, initial_state, run, spinodal_initial_phi
from .diagnostics import energy_audit, regularity_monitor
from .equilibrium import (LYAPUNOV_COLUMNS, decay_fit_samples, find_minimizer,
                          lyapunov_experiment)
from .errors import (AggError, NumericalError, ParseError, RunAborted,
                     ValidationError)
from .grid_ops import GridSpec, ScalarField, linf_norm
from .snapshots import (load_snapshot, read_diag_csv, save_snapshot,
                        write_diag_csv, write_generic_csv, csv_header,
                        format_row)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _limit_threads()
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        _error_line(exc, 1)
        return 1
    except RunAborted as exc:
        _error_line(exc.cause or exc, 2)
        return 2
    except NumericalError as exc:
        _error_line(exc, 2)
        return 2
    except AggError as exc:
        _error_line(exc, 1)
        return 1


def _error_line(exc, code):
    print(f"AGGSIM-ERROR kind={type(exc).__name__} exit={code} "
          f"message={str(exc)!r}", file=sys.stderr)


def _limit_threads():
    """AGG_THREADS caps intra-run loop parallelism (BLAS pools)."""
    n = os.environ.get("AGG_THREADS")
    if not n:
        return
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(max(1, int(n)))
    except (ImportError, ValueError):
        pass


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="aggsim",
        description="Two-phase flow simulator with structural audits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full coupled simulation")
    _add_common(p)
    p.add_argument("--restart", help="snapshot file to resume from")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("equilibrate", help="relax a seed to a local minimizer")
    _add_common(p)
    p.set_defaults(func=cmd_equilibrate)

    p = sub.add_parser("lyapunov", help="stability experiment around a minimizer")
    _add_common(p)
    p.add_argument("--eta1", type=float, help="velocity perturbation size")
    p.add_argument("--eta2", type=float, help="phase perturbation size")
    p.add_argument("--eps", type=float, help="deviation threshold")
    p.add_argument("--steady", help="snapshot of a precomputed minimizer")
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("decay-fit", help="power-law fit on an existing CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--t-a", type=float, required=True)
    p.add_argument("--t-b", type=float, required=True)
    p.add_argument("--y-cols", default="v_L2,h1_dev",
                   help="comma-separated columns summed into the signal")
    p.add_argument("--out", help="output directory for fit report/figure")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_decay_fit)

    p = sub.add_parser("energy-audit", help="budget residual refinement study")
    _add_common(p)
    p.add_argument("--dts", required=True,
                   help="comma-separated time steps, e.g. 1e-3,5e-4,2.5e-4")
    p.set_defaults(func=cmd_energy_audit)

    p = sub.add_parser("regularity", help="mixed-norm monitor from snapshots")
    p.add_argument("--snapshots", required=True, nargs="+",
                   help="snapshot files (shell glob them)")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--config", help="config file (domain lengths)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_regularity)
    return parser


def _add_common(p):
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

class _OutputDir:
    """Run directory with a single-writer lock file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.lock = self.path / ".aggsim.lock"

    def __enter__(self):
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ValidationError(
                f"{self.path} is locked by another run; concurrent runs must "
                f"use distinct directories"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False


def _load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    values = parse_config_text(text)
    return values, build_run_config(values)


def _initial_phi(cfg: RunConfig, mode: str | None = None) -> ScalarField:
    mode = mode or cfg.experiment_mode
    grid = cfg.grid
    if mode in ("spinodal", "noise"):
        return spinodal_initial_phi(grid, cfg.mean_phi, cfg.noise_amp, cfg.seed)
    if mode in ("rest", "flat"):
        if abs(cfg.mean_phi) >= 1.0:
            raise ValidationError("mean_phi must lie in (-1, 1)")
        return ScalarField(grid, np.full(grid.shape_cc, cfg.mean_phi))
    if mode == "step_x":
        return step_profile_phi(grid, cfg.mean_phi)
    raise ValidationError(f"unknown experiment mode {mode!r}")


def step_profile_phi(grid: GridSpec, mean_phi: float,
                     amplitude: float = 0.9) -> ScalarField:
    """Smoothed interface profile along x with the requested exact mean."""
    amplitude = min(amplitude, 0.95 - abs(mean_phi))
    if amplitude <= 0:
        raise ValidationError("no interface profile fits at this mean_phi")
    x, _ = grid.cell_centers()
    width = 2.0 * grid.hx
    if grid.periodic_x:
        vals = amplitude * (np.tanh((x - 0.25 * grid.Lx) / width)
                            - np.tanh((x - 0.75 * grid.Lx) / width) - 1.0)
    else:
        vals = amplitude * np.tanh((x - 0.5 * grid.Lx) / width)
    vals = vals - vals.mean() + mean_phi
    if np.abs(vals).max() >= 1.0:
        raise ValidationError("step profile leaves (-1, 1); lower |mean_phi|")
    return ScalarField(grid, vals)


class _DiagWriter:
    """Streams diagnostics rows so partial output survives aborts."""

    def __init__(self, path, resume_rows=None):
        from .diagnostics import CSV_COLUMNS
        self.fh = open(path, "w")
        self.fh.write(csv_header() + "\n")
        for row in resume_rows or []:
            self.fh.write(format_row([row[k] for k in CSV_COLUMNS]) + "\n")
        self.fh.flush()

    def write(self, rec):
        self.fh.write(format_row(rec.as_row()) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    values, cfg = _load_config(args.config)
    digest = config_hash(values)
    from .diagnostics import DiagnosticsAccumulator

    with _OutputDir(args.out) as out:
        acc = DiagnosticsAccumulator()
        if args.restart:
            state, _, _ = load_snapshot(args.restart, expected_hash=digest,
                                        Lx=cfg.grid.Lx, Ly=cfg.grid.Ly)
            diag_path = out / "diag.csv"
            if not diag_path.exists():
                raise ValidationError(
                    "restart needs the original diag.csv in the output directory"
                )
            rows = [r for r in read_diag_csv(diag_path) if r["t"] <= state.t]
            acc.replay(rows)
            writer = _DiagWriter(diag_path, resume_rows=rows)
        else:
            phi0 = _initial_phi(cfg)
            state = initial_state(cfg.grid, cfg.params, phi0)
            writer = _DiagWriter(out / "diag.csv")

        def on_snapshot(s):
            save_snapshot(out / f"snap_{s.step_index:06d}.bin", s, digest)

        try:
            result = run(cfg, state, acc=acc, on_record=writer.write,
                         on_snapshot=on_snapshot)
        finally:
            writer.close()
        save_snapshot(out / "snap_final.bin", result.final, digest)
        if not args.no_figures:
            figures.save_diagnostics_figure(result.records, out / "diag.png")
            figures.save_field_figure(result.final.phi, out / "phi_final.png",
                                      title=f"phase field, t={result.final.t:g}")
        _write_summary(out / "summary.txt", [
            f"steps          {result.final.step_index}",
            f"final time     {result.final.t:.17g}",
            f"mass drift     {result.records[-1].mass - result.records[0].mass:.3e}",
            f"energy budget  |R| = {abs(result.records[-1].R_energy):.3e}",
            f"min separation {result.min_separation:.6e}",
        ])
        print(f"run complete: {result.final.step_index} steps to "
              f"t = {result.final.t:g}; outputs in {out}")
    return 0


def cmd_equilibrate(args) -> int:
    values, cfg = _load_config(args.config)
    ex = values["experiment"]
    with _OutputDir(args.out) as out:
        seed = _initial_phi(cfg, mode=ex["eq_seed"])
        ss = find_minimizer(seed, cfg.params, tol=ex["eq_tol"],
                            max_T=ex["eq_max_t"], dt0=ex["eq_dt0"],
                            dt_max=ex["eq_dt_max"], solve=cfg.ch_solve)
        state = initial_state(cfg.grid, cfg.params, ss.phi_star)
        save_snapshot(out / "steady_state.bin", state, config_hash(values))
        write_generic_csv(out / "equilibrium.csv",
                          ("m", "E_free", "station_residual_L2", "mu_const"),
                          [(ss.m, ss.E_free_value, ss.station_residual_L2,
                            ss.mu_const)])
        if not args.no_figures:
            figures.save_field_figure(ss.phi_star, out / "phi_star.png",
                                      title="local minimizer")
        lines = [
            f"mean            {ss.m:.17g}",
            f"free energy     {ss.E_free_value:.17g}",
            f"residual L2     {ss.station_residual_L2:.3e}",
            f"multiplier      {ss.mu_const:.17g}",
            f"separation      {1.0 - linf_norm(ss.phi_star):.6e}",
        ]
        _write_summary(out / "summary.txt", lines)
        print("\n".join(["steady state found:"] + ["  " + l for l in lines]))
    return 0


def cmd_lyapunov(args) -> int:
    values, cfg = _load_config(args.config)
    ex = values["experiment"]
    eta1 = args.eta1 if args.eta1 is not None else ex["eta1"]
    eta2 = args.eta2 if args.eta2 is not None else ex["eta2"]
    eps = args.eps if args.eps is not None else ex["eps"]
    with _OutputDir(args.out) as out:
        if args.steady:
            state, _, _ = load_snapshot(args.steady, Lx=cfg.grid.Lx,
                                        Ly=cfg.grid.Ly)
            from .equilibrium import SteadyState, station_residual
            _, res_l2, mu_const = station_residual(state.phi, cfg.params)
            from .diagnostics import free_energy
            ss = SteadyState(state.phi, state.phi.mean(),
                             free_energy(state.phi, cfg.params), res_l2,
                             mu_const)
        else:
            seed = _initial_phi(cfg, mode=ex["eq_seed"])
            ss = find_minimizer(seed, cfg.params, tol=ex["eq_tol"],
                                max_T=ex["eq_max_t"], dt0=ex["eq_dt0"],
                                dt_max=ex["eq_dt_max"], solve=cfg.ch_solve)
        report, samples, _ = lyapunov_experiment(ss, eta1, eta2, eps,
                                                 cfg.t_end, cfg)
        write_generic_csv(out / "lyapunov.csv", LYAPUNOV_COLUMNS,
                          [(s.t, s.v_L2, s.h1_dev, s.h2proxy_dev, s.E_total,
                            s.R_energy) for s in samples])
        if not args.no_figures:
            figures.save_lyapunov_figure(samples, eps, out / "lyapunov.png")
        lines = [
            f"eta1 / eta2     {report.eta1:g} / {report.eta2:g}",
            f"eps             {report.eps:g}",
            f"sup H2 dev      {report.sup_H2_dev:.6e}   (H2-proxy norm)",
            f"sup |v|_L2      {report.sup_v_L2:.6e}",
            f"escape time     {report.escape_time}",
            f"passed          {report.passed}",
        ]
        _write_summary(out / "summary.txt", lines)
        print("\n".join(["stability experiment:"] + ["  " + l for l in lines]))
        if not report.passed:
            raise NumericalError(
                f"deviation {report.sup_H2_dev:.3e} exceeded eps {eps:g}"
            )
    return 0


def cmd_decay_fit(args) -> int:
    rows = read_diag_csv(args.csv)
    cols = [c.strip() for c in args.y_cols.split(",") if c.strip()]
    for c in cols:
        if rows and c not in rows[0]:
            raise ValidationError(
                f"column {c!r} not present in {args.csv}; pass --y-cols with "
                f"columns that exist (lyapunov.csv provides v_L2 and h1_dev)"
            )
    ts = [r["t"] for r in rows]
    ys = [sum(r[c] for c in cols) for r in rows]
    fit = decay_fit_samples(ts, ys, (args.t_a, args.t_b))
    print(f"alpha = {fit.alpha_hat:.12g}")
    print(f"theta = {fit.theta_hat:.12g}")
    print(f"r^2   = {fit.r_squared:.12g}")
    if args.out:
        with _OutputDir(args.out) as out:
            write_generic_csv(out / "decay_fit.csv",
                              ("alpha_hat", "theta_hat", "r_squared",
                               "t_a", "t_b"),
                              [(fit.alpha_hat, fit.theta_hat, fit.r_squared,
                                *fit.window)])
            if not args.no_figures:
                figures.save_decay_fit_figure(ts, ys, fit,
                                              out / "decay_fit.png")
    return 0


def cmd_energy_audit(args) -> int:
    values, base_cfg = _load_config(args.config)
    try:
        dts = [float(tok) for tok in args.dts.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --dts list: {exc}") from exc
    if len(dts) < 2:
        raise ValidationError("energy audit needs at least two dt values")
    with _OutputDir(args.out) as out:
        runs = []
        phi0 = _initial_phi(base_cfg)
        for i, dt in enumerate(sorted(dts, reverse=True)):
            cfg = RunConfig(**{**base_cfg.__dict__, "dt": dt, "diag_every": 1,
                               "snapshot_every": 0})
            state = initial_state(cfg.grid, cfg.params, phi0.copy())
            result = run(cfg, state)
            write_diag_csv(out / f"diag_dt{i}.csv", result.records)
            runs.append((dt, result.records))
        report = energy_audit(runs)
        write_generic_csv(out / "energy_audit.csv",
                          ("dt", "final_abs_R", "max_abs_R"),
                          list(zip(report.dts, report.final_abs_R,
                                   report.max_abs_R)))
        if not args.no_figures:
            figures.save_energy_audit_figure(report.dts, report.final_abs_R,
                                             report.order_estimate,
                                             out / "energy_audit.png")
        print(f"{'dt':>12}  {'|R(T)|':>14}  {'max|R|':>14}")
        for dt, fr, mr in zip(report.dts, report.final_abs_R, report.max_abs_R):
            print(f"{dt:>12.6g}  {fr:>14.6e}  {mr:>14.6e}")
        print(f"observed order: {report.order_estimate:.3f}")
        _write_summary(out / "summary.txt",
                       [f"observed order {report.order_estimate:.6f}"])
    return 0


def cmd_regularity(args) -> int:
    Lx = Ly = 1.0
    if args.config:
        _, cfg = _load_config(args.config)
        Lx, Ly = cfg.grid.Lx, cfg.grid.Ly
    samples = []
    for path in sorted(args.snapshots):
        state, _, _ = load_snapshot(path, Lx=Lx, Ly=Ly)
        samples.append((state.t, state.v))
    samples.sort(key=lambda s: s[0])
    report = regularity_monitor(samples, args.q, args.r)
    print(f"q = {report.q:g}, r = {report.r:g}")
    print(f"I1 (grad v) = {report.I1:.12e}")
    print(f"I2 (velocity) = {report.I2:.12e}")
    print(f"5/q + 6/r = {report.index_lhs:.12g} -> "
          f"{'satisfied' if report.index_satisfied else 'not satisfied'}")
    print(f"snapshot spacing (max) = {report.sample_dt_max:.6g}")
    if args.out:
        with _OutputDir(args.out) as out:
            write_generic_csv(out / "regularity.csv",
                              ("q", "r", "I1", "I2", "index_lhs",
                               "index_satisfied", "sample_dt_max"),
                              [(report.q, report.r, report.I1, report.I2,
                                report.index_lhs,
                                float(report.index_satisfied),
                                report.sample_dt_max)])
            if not args.no_figures:
                from .navier_stokes import grad_v_lp, speed_lp
                ts = [t for t, _ in samples]
                gn = [grad_v_lp(v, args.r) for _, v in samples]
                s_exp = np.inf if args.r == 2 else 2 * args.r / (args.r - 2)
                sn = [speed_lp(v, s_exp) for _, v in samples]
                figures.save_regularity_figure(ts, gn, sn, report,
                                               out / "regularity.png")
    return 0


def _write_summary(path, lines) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    sys.exit(main())
