import numpy as np
import pytest

from aggsim.grid_ops import GridSpec, ScalarField, VectorField


def random_scalar(grid, rng, zero_mean=False):
    vals = rng.standard_normal(grid.shape_cc)
    if zero_mean:
        vals -= vals.mean()
    return ScalarField(grid, vals)


def random_vector(grid, rng):
    u = rng.standard_normal(grid.shape_xface)
    w = rng.standard_normal(grid.shape_yface)
    if not grid.periodic_x:
        u[0, :] = 0.0
        u[-1, :] = 0.0
    if not grid.periodic_y:
        w[:, 0] = 0.0
        w[:, -1] = 0.0
    return VectorField(grid, u, w)


def solenoidal_vector(grid, rng):
    """Exactly divergence-free field from a random corner streamfunction."""
    nkx = grid.nx if grid.periodic_x else grid.nx + 1
    nky = grid.ny if grid.periodic_y else grid.ny + 1
    psi = rng.standard_normal((nkx, nky))
    if not grid.periodic_x:
        psi[0, :] = 0.0
        psi[-1, :] = 0.0
    if not grid.periodic_y:
        psi[:, 0] = 0.0
        psi[:, -1] = 0.0
    if grid.periodic_y:
        u = (np.roll(psi, -1, axis=1) - psi) / grid.hy
    else:
        u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    if grid.periodic_x:
        w = -(np.roll(psi, -1, axis=0) - psi) / grid.hx
    else:
        w = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return VectorField(grid, u, w)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


BC_GRIDS = [
    GridSpec(12, 8, 1.0, 1.0, "periodic", "periodic"),
    GridSpec(12, 8, 1.0, 1.0, "wall", "wall"),
    GridSpec(12, 8, 1.0, 1.0, "periodic", "wall"),
    GridSpec(8, 12, 2.0, 1.5, "wall", "periodic"),
]
