"""Variable-density momentum predictor and pressure projection.

The momentum step advances a tentative velocity with explicit conservative
advection of the momentum flux rho*v + J (J the diffusive flux compensating
the density mismatch), implicit variable-viscosity stress, an explicit old
pressure gradient, and the capillary force mu * grad(phi).  A weighted
Poisson projection then restores discrete incompressibility and increments
the pressure.

Velocity gradients are sampled where the MAC layout makes them natural:
diagonal entries at cell centers, shear entries at cell corners (no-slip
ghosts on walls).  Norms built from these samples satisfy the discrete
identity 2||Dv||^2 = ||grad v||^2 + ||div v||^2, so the Korn bound
||grad v|| <= sqrt(2) ||Dv|| holds to rounding error.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .errors import CflViolation, LinearSolveDiverged
from .grid_ops import (GridSpec, ScalarField, VectorField, avg_to_xface,
                       avg_to_yface, div_arrays, grad_x, grad_y,
                       solve_poisson, xface_to_cc, yface_to_cc)
from .cahn_hilliard import advect_cfl, check_divergence_free
from .materials import PhysicalParams

log = logging.getLogger(__name__)


def flux_J(phi: ScalarField, mu: ScalarField, P: PhysicalParams) -> VectorField:
    """Face-centered diffusive momentum flux -drho * b(phi)_face * grad mu.

    Vanishes identically for matched densities (single-fluid limit).
    """
    grid = phi.grid
    b_cc = P.b_of(phi.values)
    u = -P.drho * avg_to_xface(b_cc, grid) * grad_x(mu.values, grid)
    w = -P.drho * avg_to_yface(b_cc, grid) * grad_y(mu.values, grid)
    return VectorField(grid, u, w)


# ---------------------------------------------------------------------------
# velocity gradient samples
# ---------------------------------------------------------------------------

def _shear_uy(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """du/dy at corners; odd (no-slip) ghost rows on wall-y boundaries."""
    hy = grid.hy
    if grid.periodic_y:
        return (u - np.roll(u, 1, axis=1)) / hy
    out = np.empty((u.shape[0], grid.ny + 1))
    out[:, 1:-1] = (u[:, 1:] - u[:, :-1]) / hy
    out[:, 0] = 2.0 * u[:, 0] / hy
    out[:, -1] = -2.0 * u[:, -1] / hy
    return out


def _shear_wx(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    hx = grid.hx
    if grid.periodic_x:
        return (w - np.roll(w, 1, axis=0)) / hx
    out = np.empty((grid.nx + 1, w.shape[1]))
    out[1:-1, :] = (w[1:, :] - w[:-1, :]) / hx
    out[0, :] = 2.0 * w[0, :] / hx
    out[-1, :] = -2.0 * w[-1, :] / hx
    return out


def _shear_uy_adjoint(q: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Transpose of _shear_uy as a map corners -> x-faces."""
    hy = grid.hy
    if grid.periodic_y:
        return (q - np.roll(q, -1, axis=1)) / hy
    out = np.empty((q.shape[0], grid.ny))
    out[:, 1:-1] = (q[:, 1:-2] - q[:, 2:-1]) / hy
    out[:, 0] = (2.0 * q[:, 0] - q[:, 1]) / hy
    out[:, -1] = (q[:, -2] - 2.0 * q[:, -1]) / hy
    return out


def _shear_wx_adjoint(q: np.ndarray, grid: GridSpec) -> np.ndarray:
    hx = grid.hx
    if grid.periodic_x:
        return (q - np.roll(q, -1, axis=0)) / hx
    out = np.empty((grid.nx, q.shape[1]))
    out[1:-1, :] = (q[1:-2, :] - q[2:-1, :]) / hx
    out[0, :] = (2.0 * q[0, :] - q[1, :]) / hx
    out[-1, :] = (q[-2, :] - 2.0 * q[-1, :]) / hx
    return out


def _ux_cells(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_x:
        return (np.roll(u, -1, axis=0) - u) / grid.hx
    return (u[1:, :] - u[:-1, :]) / grid.hx


def _wy_cells(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_y:
        return (np.roll(w, -1, axis=1) - w) / grid.hy
    return (w[:, 1:] - w[:, :-1]) / grid.hy


def _ux_cells_adjoint(g: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_x:
        return (np.roll(g, 1, axis=0) - g) / grid.hx
    out = np.zeros((grid.nx + 1, g.shape[1]))
    out[1:-1, :] = (g[:-1, :] - g[1:, :]) / grid.hx
    return out


def _wy_cells_adjoint(g: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_y:
        return (np.roll(g, 1, axis=1) - g) / grid.hy
    out = np.zeros((g.shape[0], grid.ny + 1))
    out[:, 1:-1] = (g[:, :-1] - g[:, 1:]) / grid.hy
    return out


def corner_to_cc(q: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Average the four corner samples of every cell to its center."""
    if grid.periodic_x:
        qx = 0.5 * (q + np.roll(q, -1, axis=0))
    else:
        qx = 0.5 * (q[:-1, :] + q[1:, :])
    if grid.periodic_y:
        return 0.5 * (qx + np.roll(qx, -1, axis=1))
    return 0.5 * (qx[:, :-1] + qx[:, 1:])


def _cc_to_corner_quarter(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Quarter-sum of adjacent cell values at corners (zero-padded at walls).

    This is the corner coefficient that makes the corner quadrature of a
    cell-weighted quantity exact: sum_cells c * corner_to_cc(q) equals
    sum_corners quarter_sum(c) * q.
    """
    if grid.periodic_x:
        cx = 0.5 * (c + np.roll(c, 1, axis=0))
    else:
        cx = np.zeros((grid.nx + 1, c.shape[1]))
        cx[1:-1, :] = 0.5 * (c[1:, :] + c[:-1, :])
        cx[0, :] = 0.5 * c[0, :]
        cx[-1, :] = 0.5 * c[-1, :]
    if grid.periodic_y:
        return 0.5 * (cx + np.roll(cx, 1, axis=1))
    out = np.zeros((cx.shape[0], grid.ny + 1))
    out[:, 1:-1] = 0.5 * (cx[:, 1:] + cx[:, :-1])
    out[:, 0] = 0.5 * cx[:, 0]
    out[:, -1] = 0.5 * cx[:, -1]
    return out


def sym_grad_sq(v: VectorField) -> ScalarField:
    """Cell-centered |Dv|^2 (symmetrized velocity gradient, squared)."""
    grid = v.grid
    ux = _ux_cells(v.u, grid)
    wy = _wy_cells(v.w, grid)
    s = _shear_uy(v.u, grid) + _shear_wx(v.w, grid)
    return ScalarField(grid, ux * ux + wy * wy
                       + 0.5 * corner_to_cc(s * s, grid))


def grad_v_sq(v: VectorField) -> ScalarField:
    """Cell-centered |grad v|^2 from the same samples as sym_grad_sq."""
    grid = v.grid
    ux = _ux_cells(v.u, grid)
    wy = _wy_cells(v.w, grid)
    uy = _shear_uy(v.u, grid)
    wx = _shear_wx(v.w, grid)
    return ScalarField(grid, ux * ux + wy * wy
                       + corner_to_cc(uy * uy + wx * wx, grid))


def grad_v_lp(v: VectorField, r: float) -> float:
    """||grad v||_{L^r} from the cell-centered gradient magnitude."""
    mag2 = grad_v_sq(v).values
    if r == np.inf:
        return float(np.sqrt(mag2.max()))
    return float((mag2 ** (r / 2.0)).sum() * v.grid.cell_area) ** (1.0 / r)


def speed_lp(v: VectorField, s: float) -> float:
    """||v||_{L^s} from the cell-centered speed."""
    grid = v.grid
    u_cc = xface_to_cc(v.u, grid)
    w_cc = yface_to_cc(v.w, grid)
    mag = np.sqrt(u_cc * u_cc + w_cc * w_cc)
    if s == np.inf:
        return float(mag.max())
    return float((mag ** s).sum() * grid.cell_area) ** (1.0 / s)


# ---------------------------------------------------------------------------
# implicit viscous operator
# ---------------------------------------------------------------------------

def _zero_wall_faces(u: np.ndarray, w: np.ndarray, grid: GridSpec) -> None:
    if not grid.periodic_x:
        u[0, :] = 0.0
        u[-1, :] = 0.0
    if not grid.periodic_y:
        w[:, 0] = 0.0
        w[:, -1] = 0.0


def apply_viscous(u: np.ndarray, w: np.ndarray, nu_cc: np.ndarray,
                  grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """-div(2 nu Dv) assembled as the exact gradient of the dissipation form.

    Symmetric positive semidefinite by construction, and consistent with the
    recorded dissipation: <apply_viscous(v), v> h^2 = 2 * int nu |Dv|^2 with
    the cell-centered |Dv|^2 quadrature of sym_grad_sq.
    """
    two_nu_ux = 2.0 * nu_cc * _ux_cells(u, grid)
    two_nu_wy = 2.0 * nu_cc * _wy_cells(w, grid)
    s = _shear_uy(u, grid) + _shear_wx(w, grid)
    nu_s = _cc_to_corner_quarter(nu_cc, grid) * s
    lu = _ux_cells_adjoint(two_nu_ux, grid) + _shear_uy_adjoint(nu_s, grid)
    lw = _wy_cells_adjoint(two_nu_wy, grid) + _shear_wx_adjoint(nu_s, grid)
    _zero_wall_faces(lu, lw, grid)
    return lu, lw


def viscous_dissipation(v: VectorField, nu_cc: np.ndarray) -> float:
    """2 * int nu(phi) |Dv|^2 with the sym_grad_sq quadrature."""
    vals = 2.0 * nu_cc * sym_grad_sq(v).values
    return float(vals.sum() * v.grid.cell_area)


# ---------------------------------------------------------------------------
# momentum predictor
# ---------------------------------------------------------------------------

def _advective_div(u, w, mx, my, grid):
    """div(v (x) m) sampled at both face families (centered products)."""
    # u-momentum: d/dx at cells, d/dy at corners
    uc_mx = xface_to_cc(u, grid) * xface_to_cc(mx, grid)
    u_k = _avg_yface_dir(u, grid)
    my_k = _avg_xface_dir(my, grid)
    adv_u = _ux_cells_adjoint(-uc_mx, grid) + _diff_corner_y(u_k * my_k, grid)
    # w-momentum: d/dy at cells, d/dx at corners
    wc_my = yface_to_cc(w, grid) * yface_to_cc(my, grid)
    w_k = _avg_xface_dir_w(w, grid)
    mx_k = _avg_yface_dir(mx, grid)
    adv_w = _wy_cells_adjoint(-wc_my, grid) + _diff_corner_x(w_k * mx_k, grid)
    return adv_u, adv_w


def _avg_yface_dir(u, grid):
    """Average an x-face array along y onto corners (odd ghosts at walls)."""
    if grid.periodic_y:
        return 0.5 * (u + np.roll(u, 1, axis=1))
    out = np.zeros((u.shape[0], grid.ny + 1))
    out[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
    # no-slip: tangential velocity vanishes on the wall line
    return out


def _avg_xface_dir(my, grid):
    """Average a y-face array along x onto corners (edge values at walls)."""
    if grid.periodic_x:
        return 0.5 * (my + np.roll(my, 1, axis=0))
    out = np.empty((grid.nx + 1, my.shape[1]))
    out[1:-1, :] = 0.5 * (my[1:, :] + my[:-1, :])
    out[0, :] = my[0, :]
    out[-1, :] = my[-1, :]
    return out


def _avg_xface_dir_w(w, grid):
    """Average a y-face array along x onto corners (odd ghosts at x-walls)."""
    if grid.periodic_x:
        return 0.5 * (w + np.roll(w, 1, axis=0))
    out = np.zeros((grid.nx + 1, w.shape[1]))
    out[1:-1, :] = 0.5 * (w[1:, :] + w[:-1, :])
    return out


def _diff_corner_y(q, grid):
    """y-difference of a corner array onto x-faces."""
    if grid.periodic_y:
        return (np.roll(q, -1, axis=1) - q) / grid.hy
    return (q[:, 1:] - q[:, :-1]) / grid.hy


def _diff_corner_x(q, grid):
    if grid.periodic_x:
        return (np.roll(q, -1, axis=0) - q) / grid.hx
    return (q[1:, :] - q[:-1, :]) / grid.hx


def momentum_predict(v_n: VectorField, phi_n: ScalarField, mu_n: ScalarField,
                     p_n: ScalarField, phi_new: ScalarField,
                     mu_new: ScalarField, dt: float, P: PhysicalParams,
                     tol: float = 1e-10, max_iter: int | None = None,
                     force_zero_J: bool = False) -> VectorField:
    """Tentative velocity from the conservative-form momentum balance.

    (rho_new v* - rho_n v_n)/dt + div(v_n (x) (rho_n v_n + J_n))
        - div(2 nu(phi_new) D v*) + grad p_n = mu_new grad phi_new,
    with the viscous term implicit (CG) and everything else explicit.
    """
    grid = v_n.grid
    check_divergence_free(v_n)
    if advect_cfl(v_n, dt) > 1.0:
        warnings.warn(f"advective CFL {advect_cfl(v_n, dt):.3f} > 1",
                      CflViolation, stacklevel=2)

    rho_n_cc = P.rho_of(phi_n.values)
    rho_new_cc = P.rho_of(phi_new.values)
    rho_n_fx = avg_to_xface(rho_n_cc, grid)
    rho_n_fy = avg_to_yface(rho_n_cc, grid)
    rho_new_fx = avg_to_xface(rho_new_cc, grid)
    rho_new_fy = avg_to_yface(rho_new_cc, grid)

    if force_zero_J:
        J_u = np.zeros(grid.shape_xface)
        J_w = np.zeros(grid.shape_yface)
    else:
        J = flux_J(phi_n, mu_n, P)
        J_u, J_w = J.u, J.w
    mx = rho_n_fx * v_n.u + J_u
    my = rho_n_fy * v_n.w + J_w
    adv_u, adv_w = _advective_div(v_n.u, v_n.w, mx, my, grid)

    if log.isEnabledFor(logging.DEBUG):
        # residual between conservative d(rho v)/dt and rho dv/dt pairings
        alt = np.sqrt((((rho_new_fx - rho_n_fx) * v_n.u / dt) ** 2).sum()
                      + (((rho_new_fy - rho_n_fy) * v_n.w / dt) ** 2).sum())
        log.debug("inertia pairing residual %.3e", alt * grid.cell_area**0.5)

    cap_u = avg_to_xface(mu_new.values, grid) * grad_x(phi_new.values, grid)
    cap_w = avg_to_yface(mu_new.values, grid) * grad_y(phi_new.values, grid)
    rhs_u = rho_n_fx * v_n.u / dt - adv_u - grad_x(p_n.values, grid) + cap_u
    rhs_w = rho_n_fy * v_n.w / dt - adv_w - grad_y(p_n.values, grid) + cap_w
    _zero_wall_faces(rhs_u, rhs_w, grid)

    nu_cc = P.nu_of(phi_new.values)

    def apply_A(u, w):
        lu, lw = apply_viscous(u, w, nu_cc, grid)
        au = rho_new_fx * u / dt + lu
        aw = rho_new_fy * w / dt + lw
        _zero_wall_faces(au, aw, grid)
        return au, aw

    # approximate Jacobi diagonal of the implicit operator
    nu_fx = avg_to_xface(nu_cc, grid)
    nu_fy = avg_to_yface(nu_cc, grid)
    diag_u = rho_new_fx / dt + 4.0 * nu_fx / grid.hx**2 \
        + 2.0 * nu_fx / grid.hy**2
    diag_w = rho_new_fy / dt + 4.0 * nu_fy / grid.hy**2 \
        + 2.0 * nu_fy / grid.hx**2

    u, w = _cg_faces(apply_A, rhs_u, rhs_w, v_n.u.copy(), v_n.w.copy(),
                     grid, tol, max_iter, 1.0 / diag_u, 1.0 / diag_w)
    return VectorField(grid, u, w)


def _cg_faces(apply_A, bu, bw, u0, w0, grid, tol, max_iter,
              inv_diag_u=None, inv_diag_w=None):
    """Jacobi-preconditioned CG on the stacked face arrays (SPD operator)."""
    if max_iter is None:
        max_iter = int(100 * np.sqrt(grid.nx * grid.ny)) + 10
    if inv_diag_u is None:
        inv_diag_u = np.ones_like(bu)
        inv_diag_w = np.ones_like(bw)
    _zero_wall_faces(u0, w0, grid)
    u, w = u0, w0
    Au, Aw = apply_A(u, w)
    ru, rw = bu - Au, bw - Aw
    zu, zw = inv_diag_u * ru, inv_diag_w * rw
    pu, pw = zu.copy(), zw.copy()
    rz = float(np.vdot(ru, zu) + np.vdot(rw, zw))
    rr = float(np.vdot(ru, ru) + np.vdot(rw, rw))
    b_norm = float(np.sqrt(np.vdot(bu, bu) + np.vdot(bw, bw)))
    if b_norm == 0.0:
        return np.zeros_like(bu), np.zeros_like(bw)
    target2 = (tol * b_norm) ** 2
    for _ in range(max_iter):
        if rr <= target2:
            return u, w
        Apu, Apw = apply_A(pu, pw)
        alpha = rz / float(np.vdot(pu, Apu) + np.vdot(pw, Apw))
        u = u + alpha * pu
        w = w + alpha * pw
        ru = ru - alpha * Apu
        rw = rw - alpha * Apw
        rr = float(np.vdot(ru, ru) + np.vdot(rw, rw))
        zu, zw = inv_diag_u * ru, inv_diag_w * rw
        rz_new = float(np.vdot(ru, zu) + np.vdot(rw, zw))
        beta = rz_new / rz
        pu = zu + beta * pu
        pw = zw + beta * pw
        rz = rz_new
    if rr <= target2:
        return u, w
    raise LinearSolveDiverged(
        f"implicit momentum CG at relative residual "
        f"{np.sqrt(rr) / b_norm:.3e} after {max_iter} iterations"
    )


def project(v_star: VectorField, rho_new: ScalarField, p_old: ScalarField,
            dt: float, tol: float = 1e-10) -> tuple[VectorField, ScalarField]:
    """Weighted pressure projection restoring discrete incompressibility.

    Solves div((1/rho)_face grad psi) = div(v*)/dt with the natural Neumann
    closure, corrects v* by -dt (1/rho)_face grad psi, and increments the
    (zero-mean) pressure by psi.
    """
    grid = v_star.grid
    div_vals = div_arrays(v_star.u, v_star.w, grid) / dt
    div_vals = div_vals - div_vals.mean()  # compatibility to rounding
    inv_rho = ScalarField(grid, 1.0 / rho_new.values)
    psi = solve_poisson(ScalarField(grid, div_vals), inv_rho, tol=tol)
    corr_u = dt * avg_to_xface(inv_rho.values, grid) * grad_x(psi.values, grid)
    corr_w = dt * avg_to_yface(inv_rho.values, grid) * grad_y(psi.values, grid)
    u = v_star.u - corr_u
    w = v_star.w - corr_w
    _zero_wall_faces(u, w, grid)
    p_vals = p_old.values + psi.values
    p_vals = p_vals - p_vals.mean()
    return VectorField(grid, u, w), ScalarField(grid, p_vals)
