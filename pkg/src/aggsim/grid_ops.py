"""Discrete calculus on a 2D staggered (MAC) rectangular grid.

Scalars (phase field, chemical potential, pressure) live at cell centers;
velocity components live on the cell faces they are normal to.  Per axis the
boundary is either periodic or a wall; on walls the normal velocity on
boundary faces is exactly zero, scalars get a mirrored (homogeneous Neumann)
ghost extension, and tangential velocity ghosts are reflected odd (no-slip).

The operators here are built so that the discrete identities the audits rely
on hold to rounding error: ``div_face`` is the negative adjoint of
``grad_cc``, the Laplacian is ``div_face o grad_cc`` (hence symmetric
negative semidefinite), and the L2/H1/H2-proxy/H^-1 norms all use the same
cell/face quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleRHS, MeanNotZero, NonConvergence

PERIODIC = "periodic"
WALL = "wall"

_VALID_BC = (PERIODIC, WALL)


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform rectangular MAC grid.

    Attributes:
        nx, ny: cell counts per axis (>= 4 each).
        Lx, Ly: domain edge lengths.
        bc_x, bc_y: ``"periodic"`` or ``"wall"`` per axis; shared by all
            fields living on the grid.
    """

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0
    bc_x: str = PERIODIC
    bc_y: str = PERIODIC

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs nx, ny >= 4, got {self.nx}x{self.ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")
        if self.bc_x not in _VALID_BC or self.bc_y not in _VALID_BC:
            raise ValueError(f"bc must be one of {_VALID_BC}")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def periodic_x(self) -> bool:
        return self.bc_x == PERIODIC

    @property
    def periodic_y(self) -> bool:
        return self.bc_y == PERIODIC

    @property
    def shape_cc(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def shape_xface(self) -> tuple[int, int]:
        return (self.nx if self.periodic_x else self.nx + 1, self.ny)

    @property
    def shape_yface(self) -> tuple[int, int]:
        return (self.nx, self.ny if self.periodic_y else self.ny + 1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (ij indexing) of cell-center coordinates."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")


@dataclass
class ScalarField:
    """Cell-centered scalar samples on a grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape_cc:
            raise ValueError(
                f"scalar shape {self.values.shape} != grid {self.grid.shape_cc}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite entries")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)


@dataclass
class VectorField:
    """Face-normal velocity samples: u on x-faces, w on y-faces.

    On a wall axis the arrays include the boundary faces, whose entries must
    be exactly zero.
    """

    grid: GridSpec
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        g = self.grid
        if self.u.shape != g.shape_xface or self.w.shape != g.shape_yface:
            raise ValueError(
                f"face shapes {self.u.shape}/{self.w.shape} != grid "
                f"{g.shape_xface}/{g.shape_yface}"
            )
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.w))):
            raise ValueError("vector field contains non-finite entries")
        if not g.periodic_x and (np.any(self.u[0, :] != 0.0) or np.any(self.u[-1, :] != 0.0)):
            raise ValueError("wall x-boundary faces must carry zero normal velocity")
        if not g.periodic_y and (np.any(self.w[:, 0] != 0.0) or np.any(self.w[:, -1] != 0.0)):
            raise ValueError("wall y-boundary faces must carry zero normal velocity")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.u.copy(), self.w.copy())


def zeros_cc(grid: GridSpec) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape_cc))


def zeros_face(grid: GridSpec) -> VectorField:
    return VectorField(grid, np.zeros(grid.shape_xface), np.zeros(grid.shape_yface))


# ---------------------------------------------------------------------------
# raw array kernels (used by the hot loops; the Field wrappers stay thin)
# ---------------------------------------------------------------------------

def grad_x(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """x-face normal gradient of a cell array; zero on wall boundary faces."""
    hx = grid.hx
    if grid.periodic_x:
        return (values - np.roll(values, 1, axis=0)) / hx
    g = np.zeros(grid.shape_xface)
    g[1:-1, :] = (values[1:, :] - values[:-1, :]) / hx
    return g


def grad_y(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    hy = grid.hy
    if grid.periodic_y:
        return (values - np.roll(values, 1, axis=1)) / hy
    g = np.zeros(grid.shape_yface)
    g[:, 1:-1] = (values[:, 1:] - values[:, :-1]) / hy
    return g


def div_arrays(u: np.ndarray, w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Cell-centered divergence of face-normal arrays."""
    if grid.periodic_x:
        dx = (np.roll(u, -1, axis=0) - u) / grid.hx
    else:
        dx = (u[1:, :] - u[:-1, :]) / grid.hx
    if grid.periodic_y:
        dy = (np.roll(w, -1, axis=1) - w) / grid.hy
    else:
        dy = (w[:, 1:] - w[:, :-1]) / grid.hy
    return dx + dy


def avg_to_xface(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Arithmetic cell-to-x-face average; mirror ghosts on walls."""
    if grid.periodic_x:
        return 0.5 * (values + np.roll(values, 1, axis=0))
    out = np.empty(grid.shape_xface)
    out[1:-1, :] = 0.5 * (values[1:, :] + values[:-1, :])
    out[0, :] = values[0, :]
    out[-1, :] = values[-1, :]
    return out


def avg_to_yface(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_y:
        return 0.5 * (values + np.roll(values, 1, axis=1))
    out = np.empty(grid.shape_yface)
    out[:, 1:-1] = 0.5 * (values[:, 1:] + values[:, :-1])
    out[:, 0] = values[:, 0]
    out[:, -1] = values[:, -1]
    return out


def xface_to_cc(fx: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Average an x-face array to cell centers."""
    if grid.periodic_x:
        return 0.5 * (fx + np.roll(fx, -1, axis=0))
    return 0.5 * (fx[1:, :] + fx[:-1, :])


def yface_to_cc(fy: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_y:
        return 0.5 * (fy + np.roll(fy, -1, axis=1))
    return 0.5 * (fy[:, 1:] + fy[:, :-1])


def laplacian_arrays(values: np.ndarray, grid: GridSpec,
                     cfx: np.ndarray | None = None,
                     cfy: np.ndarray | None = None) -> np.ndarray:
    """div(c grad .) with optional face coefficients; c == 1 when omitted."""
    gx = grad_x(values, grid)
    gy = grad_y(values, grid)
    if cfx is not None:
        gx = gx * cfx
    if cfy is not None:
        gy = gy * cfy
    return div_arrays(gx, gy, grid)


# ---------------------------------------------------------------------------
# field-level operations
# ---------------------------------------------------------------------------

def grad_cc(f: ScalarField) -> VectorField:
    """Face-centered two-point gradient of a cell-centered scalar.

    On wall axes the normal gradient on boundary faces is zero (homogeneous
    Neumann mirror ghosts).
    """
    return VectorField(f.grid, grad_x(f.values, f.grid), grad_y(f.values, f.grid))


def div_face(V: VectorField) -> ScalarField:
    """Cell-centered flux divergence; discrete negative adjoint of grad_cc."""
    return ScalarField(V.grid, div_arrays(V.u, V.w, V.grid))


def laplacian(f: ScalarField) -> ScalarField:
    """div_face(grad_cc f): same code path, hence symmetric negative semidefinite."""
    return div_face(grad_cc(f))


def inner_cc(a: ScalarField | np.ndarray, b: ScalarField | np.ndarray,
             grid: GridSpec | None = None) -> float:
    av = a.values if isinstance(a, ScalarField) else a
    bv = b.values if isinstance(b, ScalarField) else b
    g = grid or (a.grid if isinstance(a, ScalarField) else b.grid)
    return float(np.vdot(av, bv) * g.cell_area)


def inner_face(A: VectorField, B: VectorField) -> float:
    area = A.grid.cell_area
    return float((np.vdot(A.u, B.u) + np.vdot(A.w, B.w)) * area)


def integral_cc(values: np.ndarray, grid: GridSpec) -> float:
    return float(values.sum() * grid.cell_area)


# ---------------------------------------------------------------------------
# Poisson solve (variable-coefficient, pure Neumann / periodic)
# ---------------------------------------------------------------------------

def solve_poisson(rhs: ScalarField, coeff: ScalarField | float = 1.0,
                  tol: float = 1e-10, max_iter: int | None = None,
                  precondition: str | None = "spectral") -> ScalarField:
    """Solve div(coeff_face * grad psi) = rhs for a zero-mean psi.

    ``coeff`` is cell-centered (or the constant 1) and is averaged to faces
    arithmetically.  The system is singular with nullspace = constants, so the
    right-hand side must have zero mean (to 1e-12 * ||rhs||); the returned
    field has zero mean.  Conjugate gradients to relative residual ``tol``
    with an iteration cap of ``50 * sqrt(nx*ny)``; ``precondition`` chooses
    "spectral" (constant-coefficient mode inverse, default), "jacobi", or
    None.

    Raises:
        IncompatibleRHS: the right-hand side mean is out of tolerance.
        NonConvergence: the iteration cap was reached first.
    """
    grid = rhs.grid
    b = rhs.values
    rhs_norm = float(np.linalg.norm(b))
    mean_abs = abs(b.mean()) * np.sqrt(b.size)  # |<b,1>| / ||1||, discrete
    if rhs_norm > 0 and mean_abs > 1e-12 * rhs_norm:
        raise IncompatibleRHS(
            f"rhs mean {b.mean():.3e} exceeds 1e-12 * ||rhs|| compatibility bound"
        )
    if rhs_norm == 0.0:
        return zeros_cc(grid)

    if isinstance(coeff, ScalarField):
        cfx = avg_to_xface(coeff.values, grid)
        cfy = avg_to_yface(coeff.values, grid)
        coeff_mean = float(coeff.values.mean())
    elif coeff == 1 or coeff == 1.0:
        cfx = cfy = None
        coeff_mean = 1.0
    else:
        cfx = np.full(grid.shape_xface, float(coeff))
        cfy = np.full(grid.shape_yface, float(coeff))
        coeff_mean = float(coeff)

    # CG on the SPD operator -div(c grad .), restricted to zero-mean fields.
    def apply_A(x):
        return -laplacian_arrays(x, grid, cfx, cfy)

    if precondition == "spectral":
        from .spectral import poisson_preconditioner
        apply_M = poisson_preconditioner(grid, coeff_mean)
    elif precondition == "jacobi":
        diag = _poisson_diagonal(grid, cfx, cfy)
        inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
        apply_M = lambda r: inv_diag * r
    else:
        apply_M = lambda r: r

    b = -(b - b.mean())  # exact zero-mean projection of the consistent rhs
    if max_iter is None:
        max_iter = int(50 * np.sqrt(grid.nx * grid.ny))

    x = np.zeros_like(b)
    r = b.copy()
    z = apply_M(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    b_norm = float(np.linalg.norm(b))
    target = tol * b_norm
    for _ in range(max_iter):
        if np.linalg.norm(r) <= target:
            break
        Ap = apply_A(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            break
        z = apply_M(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise NonConvergence(
            f"Poisson CG stalled at relative residual "
            f"{np.linalg.norm(r) / b_norm:.3e} after {max_iter} iterations"
        )
    x -= x.mean()
    return ScalarField(grid, x)


def _poisson_diagonal(grid: GridSpec, cfx, cfy) -> np.ndarray:
    """Diagonal of -div(c grad .) for Jacobi preconditioning."""
    cx = cfx if cfx is not None else np.ones(grid.shape_xface)
    cy = cfy if cfy is not None else np.ones(grid.shape_yface)
    diag = np.zeros(grid.shape_cc)
    if grid.periodic_x:
        diag += (cx + np.roll(cx, -1, axis=0)) / grid.hx**2
    else:
        diag += (cx[:-1, :] + cx[1:, :]) / grid.hx**2
        diag[0, :] -= cx[0, :] / grid.hx**2
        diag[-1, :] -= cx[-1, :] / grid.hx**2
    if grid.periodic_y:
        diag += (cy + np.roll(cy, -1, axis=1)) / grid.hy**2
    else:
        diag += (cy[:, :-1] + cy[:, 1:]) / grid.hy**2
        diag[:, 0] -= cy[:, 0] / grid.hy**2
        diag[:, -1] -= cy[:, -1] / grid.hy**2
    return diag


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def lp_norm(f: ScalarField | VectorField, p: float) -> float:
    """Grid L^p norm; for vector fields the components are summed face-wise."""
    if p == np.inf:
        return linf_norm(f)
    area = f.grid.cell_area
    if isinstance(f, ScalarField):
        return float((np.abs(f.values) ** p).sum() * area) ** (1.0 / p)
    total = (np.abs(f.u) ** p).sum() + (np.abs(f.w) ** p).sum()
    return float(total * area) ** (1.0 / p)


def l2_norm(f: ScalarField | VectorField) -> float:
    area = f.grid.cell_area
    if isinstance(f, ScalarField):
        return float(np.sqrt(np.vdot(f.values, f.values) * area))
    return float(np.sqrt((np.vdot(f.u, f.u) + np.vdot(f.w, f.w)) * area))


def linf_norm(f: ScalarField | VectorField) -> float:
    if isinstance(f, ScalarField):
        return float(np.abs(f.values).max())
    return float(max(np.abs(f.u).max(), np.abs(f.w).max()))


def h1_norm(f: ScalarField) -> float:
    return float(np.sqrt(l2_norm(f) ** 2 + l2_norm(grad_cc(f)) ** 2))


def h2proxy_norm(f: ScalarField) -> float:
    """H1 norm plus the Laplacian seminorm.

    Proxy for the full H2 norm: equivalent on homogeneous-Neumann fields and
    cheaper than assembling all second differences.  Reported as a proxy
    wherever an H2 deviation appears.
    """
    return float(np.sqrt(h1_norm(f) ** 2 + l2_norm(laplacian(f)) ** 2))


def hminus1_norm(f: ScalarField, tol: float = 1e-10) -> float:
    """Dual (H^1)' norm of a zero-mean scalar: ||grad psi|| with lap psi = f."""
    fnorm = l2_norm(f)
    if fnorm == 0.0:
        return 0.0
    if abs(f.mean()) * np.sqrt(f.grid.nx * f.grid.ny) > 1e-12 * np.linalg.norm(f.values):
        raise MeanNotZero(f"H^-1 norm needs zero mean, got {f.mean():.3e}")
    psi = solve_poisson(f, 1.0, tol=tol)
    return l2_norm(grad_cc(psi))


def norm(f: ScalarField | VectorField, kind: str, p: float = 2.0) -> float:
    """Dispatching norm: kind in {"Lp", "L2", "Linf", "H1", "H2proxy", "Hminus1"}."""
    if kind == "Lp":
        return lp_norm(f, p)
    if kind == "L2":
        return l2_norm(f)
    if kind == "Linf":
        return linf_norm(f)
    if kind == "H1":
        return h1_norm(f)
    if kind == "H2proxy":
        return h2proxy_norm(f)
    if kind == "Hminus1":
        return hminus1_norm(f)
    raise ValueError(f"unknown norm kind {kind!r}")
