"""Convective Cahn-Hilliard update on the staggered grid.

One time step treats the convex logarithmic part of the potential implicitly
and the concave quadratic part explicitly, lags the gradient-energy
coefficient and the mobility to the old step, and transports the phase field
with conservative centered fluxes (valid because the velocity is discretely
divergence free).  The resulting nonlinear system in the new phase field is
solved by damped Newton with an exact sparse Jacobian.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import bicgstab, splu

from .errors import (CflViolation, NewtonDiverged, SeparationViolated,
                     ValidationError)
from .grid_ops import (GridSpec, ScalarField, VectorField, avg_to_xface,
                       avg_to_yface, div_arrays, grad_x, grad_y, l2_norm,
                       linf_norm, xface_to_cc, yface_to_cc)
from .materials import PhysicalParams

log = logging.getLogger(__name__)


@dataclass
class ChSolveParams:
    """Newton/linear tolerances for the implicit phase-field step."""

    newton_tol: float = 1e-10
    newton_max: int = 50
    max_halvings: int = 30
    linear_tol: float = 1e-11

    def __post_init__(self):
        if min(self.newton_tol, self.newton_max, self.max_halvings,
               self.linear_tol) <= 0:
            raise ValueError("solver parameters must be positive")


def chemical_potential(phi: ScalarField, P: PhysicalParams) -> ScalarField:
    """First variation of the free energy at a cell-centered phase field.

    mu = a'(phi) |grad phi|^2 / 2 - div(a(phi)_face grad phi) + psi'(phi),
    with |grad phi|^2 averaged from face squares and a(phi) averaged
    arithmetically onto faces.

    Raises:
        SeparationViolated: the field is not separated from the pure phases
            by the configured guard distance.
    """
    if linf_norm(phi) > 1.0 - P.sep_guard:
        raise SeparationViolated(
            f"|phi| reaches {linf_norm(phi):.12f}, inside the separation guard"
        )
    grid = phi.grid
    vals = phi.values
    a_cc = P.a_of(vals)
    gx = grad_x(vals, grid)
    gy = grad_y(vals, grid)
    diff = div_arrays(avg_to_xface(a_cc, grid) * gx,
                      avg_to_yface(a_cc, grid) * gy, grid)
    quad = 0.5 * P.a_prime(vals) * (xface_to_cc(gx * gx, grid)
                                    + yface_to_cc(gy * gy, grid))
    return ScalarField(grid, quad - diff + P.psi_prime(vals))


def check_divergence_free(v: VectorField, tol: float = 1e-9) -> None:
    div = div_arrays(v.u, v.w, v.grid)
    h = min(v.grid.hx, v.grid.hy)
    scale = max(1.0, l2_norm(v)) / h
    if float(np.sqrt((div * div).sum() * v.grid.cell_area)) > tol * scale:
        raise ValidationError(
            "advecting velocity is not discretely divergence free; "
            "refusing to run a non-conservative transport step"
        )


def advect_cfl(v: VectorField, dt: float) -> float:
    g = v.grid
    umax = np.abs(v.u).max() if v.u.size else 0.0
    wmax = np.abs(v.w).max() if v.w.size else 0.0
    return dt * max(umax / g.hx, wmax / g.hy)


class _ChNewtonSystem:
    """Residual/Jacobian of the implicit step, with lagged coefficients."""

    def __init__(self, phi_n: ScalarField, v_n: VectorField, dt: float,
                 P: PhysicalParams):
        grid = phi_n.grid
        self.grid = grid
        self.P = P
        self.dt = dt
        self.phi_n = phi_n.values
        vals = self.phi_n
        self.a_fx = avg_to_xface(P.a_of(vals), grid)
        self.a_fy = avg_to_yface(P.a_of(vals), grid)
        self.b_fx = avg_to_xface(P.b_of(vals), grid)
        self.b_fy = avg_to_yface(P.b_of(vals), grid)
        self.ap_cc = P.a_prime(vals)
        self.gx_n = grad_x(vals, grid)
        self.gy_n = grad_y(vals, grid)
        # explicit conservative transport of the old field
        phi_fx = avg_to_xface(vals, grid)
        phi_fy = avg_to_yface(vals, grid)
        self.conv = div_arrays(v_n.u * phi_fx, v_n.w * phi_fy, grid)
        self.theta0_phi_n = P.theta0 * vals
        # fixed sparse pieces for the Jacobian
        self.B_neg = -_div_cgrad_matrix(grid, self.b_fx, self.b_fy)
        self.A_neg = -_div_cgrad_matrix(grid, self.a_fx, self.a_fy)
        self.eye = sp.identity(grid.nx * grid.ny, format="csr")
        self.a_mean = float(P.a_of(vals).mean())
        self.b_mean = 0.5 * float(self.b_fx.mean() + self.b_fy.mean())

    def solve_linear(self, J: sp.spmatrix, rhs: np.ndarray, phi: np.ndarray,
                     rtol: float) -> np.ndarray:
        """Newton correction solve: spectral-preconditioned Krylov iteration
        with a sparse direct fallback for strongly variable coefficients."""
        from .spectral import ch_jacobian_preconditioner
        curv = float(self.P.psi0_second(phi).mean())
        prec = ch_jacobian_preconditioner(self.grid, self.dt, self.a_mean,
                                          self.b_mean, curv)
        M = sp.linalg.LinearOperator(
            J.shape, matvec=lambda v: prec(v.reshape(self.grid.shape_cc)).ravel())
        x, info = bicgstab(J, rhs.ravel(), M=M, rtol=rtol, atol=0.0,
                           maxiter=200)
        if info == 0:
            return x.reshape(self.grid.shape_cc)
        log.debug("krylov fallback to direct solve (info=%d)", info)
        return splu(J.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(
            rhs.ravel()).reshape(self.grid.shape_cc)

    def mu_of(self, phi: np.ndarray) -> np.ndarray:
        grid = self.grid
        gxh = 0.5 * (self.gx_n + grad_x(phi, grid))
        gyh = 0.5 * (self.gy_n + grad_y(phi, grid))
        quad = 0.5 * self.ap_cc * (xface_to_cc(gxh * gxh, grid)
                                   + yface_to_cc(gyh * gyh, grid))
        diff = div_arrays(self.a_fx * grad_x(phi, grid),
                          self.a_fy * grad_y(phi, grid), grid)
        return quad - diff + self.P.psi0_prime(phi) - self.theta0_phi_n

    def residual(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu = self.mu_of(phi)
        chem = div_arrays(self.b_fx * grad_x(mu, self.grid),
                          self.b_fy * grad_y(mu, self.grid), self.grid)
        return (phi - self.phi_n) / self.dt + self.conv - chem, mu

    def jacobian(self, phi: np.ndarray) -> sp.csr_matrix:
        grid = self.grid
        gxh = 0.5 * (self.gx_n + grad_x(phi, grid))
        gyh = 0.5 * (self.gy_n + grad_y(phi, grid))
        # d/dphi of the midpoint-gradient quadratic term
        Q = _grad_dot_matrix(grid, gxh, gyh, 0.5 * self.ap_cc)
        M = self.A_neg + sp.diags(self.P.psi0_second(phi).ravel()) + Q
        return (self.eye / self.dt + self.B_neg @ M).tocsr()

    def residual_floor(self, phi: np.ndarray, mu: np.ndarray) -> float:
        """Rounding floor of the residual evaluation (L2, conservative).

        The biharmonic-order composition amplifies per-entry rounding by the
        squared stencil scale; an absolute Newton tolerance below this level
        is not representable in double precision on fine grids.
        """
        grid = self.grid
        lam = 4.0 * (1.0 / grid.hx**2 + 1.0 / grid.hy**2)
        eps = np.finfo(np.float64).eps
        amp = (self.P.b_hi * lam
               * (self.P.a_hi * lam * max(1.0, np.abs(phi).max())
                  + np.abs(mu).max())
               + np.abs(phi - self.phi_n).max() / self.dt)
        return 4.0 * eps * amp * np.sqrt(grid.area)


def ch_step(phi_n: ScalarField, v_n: VectorField, dt: float,
            P: PhysicalParams, S: ChSolveParams | None = None
            ) -> tuple[ScalarField, ScalarField]:
    """One conservative semi-implicit phase-field step with given velocity.

    Returns the new phase field (mean preserved exactly) and the chemical
    potential the step's flux actually used.

    Raises:
        NewtonDiverged, SeparationViolated, ValidationError
    """
    S = S or ChSolveParams()
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if linf_norm(phi_n) > 1.0 - P.sep_guard:
        raise SeparationViolated("initial field inside the separation guard")
    check_divergence_free(v_n)
    if advect_cfl(v_n, dt) > 1.0:
        warnings.warn(f"advective CFL {advect_cfl(v_n, dt):.3f} > 1",
                      CflViolation, stacklevel=2)

    sysm = _ChNewtonSystem(phi_n, v_n, dt, P)
    cap = 1.0 - P.sep_guard
    phi = phi_n.values.copy()
    F, mu = sysm.residual(phi)
    rnorm = l2_norm(ScalarField(phi_n.grid, F))
    log.debug("newton residual %.6e", rnorm)
    converged = rnorm <= S.newton_tol
    for _ in range(S.newton_max):
        if converged:
            break
        J = sysm.jacobian(phi)
        delta = sysm.solve_linear(J, -F, phi, S.linear_tol)
        lam = 1.0
        clamped = False
        r_prev = rnorm
        for _halving in range(S.max_halvings + 1):
            trial = phi + lam * delta
            clamped = bool(np.any(np.abs(trial) > cap))
            if clamped:
                trial = np.clip(trial, -cap, cap)
            F_t, mu_t = sysm.residual(trial)
            r_t = l2_norm(ScalarField(phi_n.grid, F_t))
            if r_t < rnorm:
                phi, F, mu, rnorm = trial, F_t, mu_t, r_t
                log.debug("newton residual %.6e", rnorm)
                break
            lam *= 0.5
        else:
            if rnorm <= sysm.residual_floor(phi, mu):
                # progress is limited by rounding, not by the iteration
                log.debug("newton accepted at rounding floor %.3e", rnorm)
                converged = True
                break
            if clamped:
                raise SeparationViolated(
                    "Newton iterate pinned at the separation clamp with "
                    "damping exhausted"
                )
            raise NewtonDiverged(
                f"damping exhausted at residual {rnorm:.3e}"
            )
        converged = rnorm <= S.newton_tol
        if not converged and rnorm > 0.5 * r_prev \
                and rnorm <= sysm.residual_floor(phi, mu):
            # stagnating against evaluation rounding, not iteration failure
            log.debug("newton accepted at rounding floor %.3e", rnorm)
            converged = True
    if not converged:
        raise NewtonDiverged(
            f"residual {rnorm:.3e} > {S.newton_tol:.1e} "
            f"after {S.newton_max} iterations"
        )
    if np.abs(phi).max() >= cap:
        raise SeparationViolated("converged field touches the separation clamp")
    # exact mass restoration (removes the last-ulp drift of the solve)
    phi = phi - (phi.mean() - sysm.phi_n.mean())
    mu = sysm.mu_of(phi)
    return ScalarField(phi_n.grid, phi), ScalarField(phi_n.grid, mu)


def ch_rhs(phi: ScalarField, v: VectorField, P: PhysicalParams) -> ScalarField:
    """Instantaneous semi-discrete right-hand side d(phi)/dt.

    Uses the unsplit potential and current-state coefficients; this is the
    dynamics the semi-implicit step approximates, and what time-derivative
    diagnostics should be measured against.
    """
    grid = phi.grid
    mu = chemical_potential(phi, P)
    b_fx = avg_to_xface(P.b_of(phi.values), grid)
    b_fy = avg_to_yface(P.b_of(phi.values), grid)
    chem = div_arrays(b_fx * grad_x(mu.values, grid),
                      b_fy * grad_y(mu.values, grid), grid)
    conv = div_arrays(v.u * avg_to_xface(phi.values, grid),
                      v.w * avg_to_yface(phi.values, grid), grid)
    return ScalarField(grid, chem - conv)


# ---------------------------------------------------------------------------
# sparse stencil assembly (cached index structure per grid)
# ---------------------------------------------------------------------------

_INDEX_CACHE: dict[GridSpec, dict] = {}


def _stencil_indices(grid: GridSpec) -> dict:
    cached = _INDEX_CACHE.get(grid)
    if cached is not None:
        return cached
    nx, ny = grid.nx, grid.ny

    def cid(i, j):
        return (i * ny + j).ravel()

    jj = np.arange(ny)
    # interior x-faces: face index f lies between cells (f-1, f) (wrap if periodic)
    if grid.periodic_x:
        fi = np.arange(nx)
    else:
        fi = np.arange(1, nx)
    FI, FJ = np.meshgrid(fi, jj, indexing="ij")
    left_x = cid((FI - 1) % nx, FJ)
    right_x = cid(FI % nx, FJ)

    ii = np.arange(nx)
    if grid.periodic_y:
        fj = np.arange(ny)
    else:
        fj = np.arange(1, ny)
    GI, GJ = np.meshgrid(ii, fj, indexing="ij")
    left_y = cid(GI, (GJ - 1) % ny)
    right_y = cid(GI, GJ % ny)

    cached = {
        "xface_sel": (FI, FJ), "left_x": left_x, "right_x": right_x,
        "yface_sel": (GI, GJ), "left_y": left_y, "right_y": right_y,
    }
    _INDEX_CACHE[grid] = cached
    return cached


def _div_cgrad_matrix(grid: GridSpec, cfx: np.ndarray, cfy: np.ndarray
                      ) -> sp.csr_matrix:
    """Sparse matrix of phi -> div(c_face grad phi); symmetric, neg. semidef."""
    idx = _stencil_indices(grid)
    n = grid.nx * grid.ny
    cx = (cfx[idx["xface_sel"]] / grid.hx**2).ravel()
    cy = (cfy[idx["yface_sel"]] / grid.hy**2).ravel()
    lx, rx = idx["left_x"], idx["right_x"]
    ly, ry = idx["left_y"], idx["right_y"]
    rows = np.concatenate([lx, lx, rx, rx, ly, ly, ry, ry])
    cols = np.concatenate([lx, rx, rx, lx, ly, ry, ry, ly])
    vals = np.concatenate([-cx, cx, -cx, cx, -cy, cy, -cy, cy])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _grad_dot_matrix(grid: GridSpec, wx: np.ndarray, wy: np.ndarray,
                     scale_cc: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of delta -> scale_cc * avg_cc(w . grad delta)."""
    idx = _stencil_indices(grid)
    n = grid.nx * grid.ny
    scale = np.broadcast_to(scale_cc, grid.shape_cc).ravel()
    # each interior face feeds half its w * grad into both adjacent cells
    cx = (wx[idx["xface_sel"]] / (2.0 * grid.hx)).ravel()
    cy = (wy[idx["yface_sel"]] / (2.0 * grid.hy)).ravel()
    lx, rx = idx["left_x"], idx["right_x"]
    ly, ry = idx["left_y"], idx["right_y"]
    rows = np.concatenate([lx, lx, rx, rx, ly, ly, ry, ry])
    cols = np.concatenate([rx, lx, rx, lx, ry, ly, ry, ly])
    vals = np.concatenate([
        cx * scale[lx], -cx * scale[lx], cx * scale[rx], -cx * scale[rx],
        cy * scale[ly], -cy * scale[ly], cy * scale[ry], -cy * scale[ry],
    ])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
