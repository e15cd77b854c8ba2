"""Fast transforms that diagonalize the constant-coefficient Laplacian.

The cell-centered 5-point div(grad) stencil is diagonal in Fourier space on
periodic axes and in DCT-II space on wall (homogeneous Neumann) axes.  These
transforms back the preconditioners of the Poisson and implicit phase-field
solves: for constant coefficients they invert the operator outright, for
variable coefficients they leave a well-conditioned remainder to the Krylov
iteration.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .grid_ops import GridSpec

_SYMBOL_CACHE: dict[GridSpec, np.ndarray] = {}


def laplace_symbol(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of -div(grad .) ordered to match the transforms."""
    cached = _SYMBOL_CACHE.get(grid)
    if cached is not None:
        return cached
    if grid.periodic_x:
        lx = (4.0 / grid.hx**2) * np.sin(np.pi * np.arange(grid.nx)
                                         / grid.nx) ** 2
    else:
        lx = (4.0 / grid.hx**2) * np.sin(np.pi * np.arange(grid.nx)
                                         / (2.0 * grid.nx)) ** 2
    if grid.periodic_y:
        ly = (4.0 / grid.hy**2) * np.sin(np.pi * np.arange(grid.ny)
                                         / grid.ny) ** 2
    else:
        ly = (4.0 / grid.hy**2) * np.sin(np.pi * np.arange(grid.ny)
                                         / (2.0 * grid.ny)) ** 2
    sym = lx[:, None] + ly[None, :]
    _SYMBOL_CACHE[grid] = sym
    return sym


def to_modes(arr: np.ndarray, grid: GridSpec) -> np.ndarray:
    if not grid.periodic_x:
        arr = sfft.dct(arr, type=2, axis=0, norm="ortho")
    if not grid.periodic_y:
        arr = sfft.dct(arr, type=2, axis=1, norm="ortho")
    if grid.periodic_x:
        arr = sfft.fft(arr, axis=0)
    if grid.periodic_y:
        arr = sfft.fft(arr, axis=1)
    return arr


def from_modes(arr: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.periodic_y:
        arr = sfft.ifft(arr, axis=1)
    if grid.periodic_x:
        arr = sfft.ifft(arr, axis=0)
    arr = arr.real if np.iscomplexobj(arr) else arr
    if not grid.periodic_y:
        arr = sfft.idct(arr, type=2, axis=1, norm="ortho")
    if not grid.periodic_x:
        arr = sfft.idct(arr, type=2, axis=0, norm="ortho")
    return arr


class DiagonalModeInverse:
    """Applies (symbol)^-1 in mode space; the zero mode maps to zero."""

    def __init__(self, grid: GridSpec, symbol: np.ndarray):
        self.grid = grid
        guarded = symbol.copy()
        self.zero = np.abs(guarded) < 1e-300
        guarded[self.zero] = 1.0
        self.inv = 1.0 / guarded

    def __call__(self, values: np.ndarray) -> np.ndarray:
        modes = to_modes(values, self.grid) * self.inv
        modes[self.zero] = 0.0
        return from_modes(modes, self.grid)


def poisson_preconditioner(grid: GridSpec, coeff_mean: float
                           ) -> DiagonalModeInverse:
    """Inverse of coeff_mean * (-div grad) on the zero-mean subspace."""
    return DiagonalModeInverse(grid, coeff_mean * laplace_symbol(grid))


def ch_jacobian_preconditioner(grid: GridSpec, dt: float, a_mean: float,
                               b_mean: float, curvature_mean: float
                               ) -> DiagonalModeInverse:
    """Inverse of the constant-coefficient implicit phase-field symbol
    1/dt + b (-lap) (a (-lap) + curvature)."""
    lam = laplace_symbol(grid)
    symbol = 1.0 / dt + b_mean * lam * (a_mean * lam + curvature_mean)
    return DiagonalModeInverse(grid, symbol)
