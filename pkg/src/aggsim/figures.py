"""Report figures rendered to files next to the CSV outputs."""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (7.0, 5.0)
plt.rcParams["figure.dpi"] = 120
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["font.size"] = 9


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_diagnostics_figure(records, path):
    t = [r.t for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    ax = axes[0, 0]
    ax.plot(t, [r.E_total for r in records], label="total")
    ax.plot(t, [r.E_kin for r in records], label="kinetic")
    ax.plot(t, [r.E_free for r in records], label="free")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()

    ax = axes[0, 1]
    m0 = records[0].mass
    ax.plot(t, [r.mass - m0 for r in records])
    ax.set_xlabel("t")
    ax.set_ylabel("mass drift")

    ax = axes[1, 0]
    ax.semilogy(t, [max(r.D_visc, 1e-300) for r in records], label="viscous")
    ax.semilogy(t, [max(r.D_chem, 1e-300) for r in records], label="chemical")
    ax.set_xlabel("t")
    ax.set_ylabel("dissipation rate")
    ax.legend()

    ax = axes[1, 1]
    ax.plot(t, [r.phi_min for r in records], label="min phi")
    ax.plot(t, [r.phi_max for r in records], label="max phi")
    ax.axhline(1.0, color="r", lw=0.8)
    ax.axhline(-1.0, color="r", lw=0.8)
    ax.set_xlabel("t")
    ax.legend()
    _finish(fig, path)


def save_field_figure(field, path, title=""):
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    g = field.grid
    im = ax.imshow(field.values.T, origin="lower", cmap="RdBu_r",
                   extent=(0, g.Lx, 0, g.Ly), aspect="equal")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.grid(False)
    _finish(fig, path)


def save_energy_audit_figure(dts, residuals, order, path):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.loglog(dts, residuals, "o-", label="|R(T)|")
    ref = residuals[0] * (np.asarray(dts) / dts[0])
    ax.loglog(dts, ref, "k--", lw=0.8, label="first order")
    ax.set_xlabel("dt")
    ax.set_ylabel("budget residual")
    ax.set_title(f"observed order {order:.2f}")
    ax.legend()
    _finish(fig, path)


def save_lyapunov_figure(samples, eps, path):
    t = [s.t for s in samples]
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    ax.semilogy(t, [max(s.h2proxy_dev, 1e-300) for s in samples],
                label="phase deviation (H2 proxy)")
    ax.semilogy(t, [max(s.v_L2, 1e-300) for s in samples], label="velocity L2")
    ax.axhline(eps, color="r", lw=0.8, label="eps")
    ax.set_xlabel("t")
    ax.legend()
    _finish(fig, path)


def save_decay_fit_figure(ts, ys, fit, path):
    ts = np.asarray(ts)
    ys = np.asarray(ys)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.loglog(1.0 + ts, ys, "o", ms=3, label="signal")
    t_a, t_b = fit.window
    tw = np.linspace(max(t_a, ts.min()), min(t_b, ts.max()), 50)
    mask = (ts >= t_a) & (ts <= t_b)
    if mask.any():
        anchor_t, anchor_y = ts[mask][0], ys[mask][0]
        ax.loglog(1.0 + tw,
                  anchor_y * ((1.0 + tw) / (1.0 + anchor_t)) ** (-fit.alpha_hat),
                  "k--", label=f"fit alpha={fit.alpha_hat:.3g}")
    ax.axvspan(1.0 + t_a, 1.0 + t_b, alpha=0.1, color="g")
    ax.set_xlabel("1 + t")
    ax.set_ylabel("velocity + phase deviation")
    ax.legend()
    _finish(fig, path)


def save_regularity_figure(ts, grad_norms, speed_norms, report, path):
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    ax.plot(ts, grad_norms, "o-", label=f"||grad v||_Lr, r={report.r:g}")
    ax.plot(ts, speed_norms, "s-", label="conjugate velocity norm")
    ax.set_xlabel("t")
    status = "satisfied" if report.index_satisfied else "not satisfied"
    ax.set_title(f"5/q + 6/r = {report.index_lhs:.3f} ({status})")
    ax.legend()
    _finish(fig, path)
