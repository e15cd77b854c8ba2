"""Constitutive laws: logarithmic double-well potential, linear density and
viscosity mixing rules, polynomial gradient-energy coefficient a() and
mobility b(), and the square-root-coefficient antiderivative transform.

The potential splits as psi = psi0 - (theta0/2) s^2 with psi0 the convex
logarithmic part; time stepping treats psi0' implicitly and the concave part
explicitly, so both pieces are exposed here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import xlogy

from .errors import DomainError, NonPositiveCoefficient

_SCAN_POINTS = 10_001


def _poly_eval(coeffs, s):
    """Evaluate sum_k coeffs[k] * s^k (ascending order)."""
    out = np.zeros_like(np.asarray(s, dtype=np.float64))
    for c in reversed(coeffs):
        out = out * s + c
    return out


def _poly_deriv(coeffs):
    return tuple(k * c for k, c in enumerate(coeffs))[1:] or (0.0,)


def certified_poly_bounds(coeffs) -> tuple[float, float]:
    """Certified (min, max) of a polynomial over [-1, 1].

    Dense scan plus a Lipschitz margin from the derivative's coefficient
    bound, so the returned min is a true lower bound and the max a true
    upper bound.
    """
    s = np.linspace(-1.0, 1.0, _SCAN_POINTS)
    vals = _poly_eval(coeffs, s)
    lip = sum(abs(c) for c in _poly_deriv(coeffs))
    margin = lip * (s[1] - s[0]) / 2.0
    return float(vals.min() - margin), float(vals.max() + margin)


@dataclass
class PhysicalParams:
    """Fluid and mixture parameters.

    ``a_coeffs`` / ``b_coeffs`` are ascending polynomial coefficients in the
    phase variable; both polynomials must be certifiably positive on [-1, 1]
    (non-degenerate mobility, positive gradient-energy coefficient).
    ``theta < theta0`` puts the quench below the critical temperature so the
    potential has a double-well shape.  ``sep_guard`` is the clamp distance
    from +-1 used inside nonlinear solves; the continuous dynamics keep
    |phi| < 1 on their own, the guard only protects floating-point
    evaluation of the logarithms.
    """

    rho1: float = 1.0
    rho2: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0
    theta: float = 1.0
    theta0: float = 2.0
    a_coeffs: tuple = (1.0,)
    b_coeffs: tuple = (1.0,)
    a_lo: float | None = None
    a_hi: float | None = None
    b_lo: float | None = None
    b_hi: float | None = None
    sep_guard: float = 1e-9

    def __post_init__(self):
        if min(self.rho1, self.rho2, self.nu1, self.nu2) <= 0:
            raise ValueError("densities and viscosities must be positive")
        if not (0 < self.theta < self.theta0):
            raise ValueError(
                f"need 0 < theta < theta0, got theta={self.theta}, theta0={self.theta0}"
            )
        if not (0 < self.sep_guard <= 1e-6):
            raise ValueError("sep_guard must lie in (0, 1e-6]")
        self.a_coeffs = tuple(float(c) for c in self.a_coeffs)
        self.b_coeffs = tuple(float(c) for c in self.b_coeffs)
        for name in ("a", "b"):
            coeffs = getattr(self, f"{name}_coeffs")
            lo_cert, hi_cert = certified_poly_bounds(coeffs)
            lo = getattr(self, f"{name}_lo")
            hi = getattr(self, f"{name}_hi")
            if lo is None:
                lo = lo_cert
            if hi is None:
                hi = hi_cert
            if lo_cert < lo or lo <= 0:
                raise NonPositiveCoefficient(
                    f"{name}() certified minimum {lo_cert:.6g} on [-1,1] violates "
                    f"the declared positive lower bound {lo!r}"
                )
            if hi_cert > hi:
                raise NonPositiveCoefficient(
                    f"{name}() certified maximum {hi_cert:.6g} exceeds the "
                    f"declared upper bound {hi!r}"
                )
            setattr(self, f"{name}_lo", float(lo))
            setattr(self, f"{name}_hi", float(hi))

    # --- derived extremes ---------------------------------------------------

    @property
    def rho_min(self) -> float:
        return min(self.rho1, self.rho2)

    @property
    def rho_max(self) -> float:
        return max(self.rho1, self.rho2)

    @property
    def nu_min(self) -> float:
        return min(self.nu1, self.nu2)

    @property
    def nu_max(self) -> float:
        return max(self.nu1, self.nu2)

    @property
    def drho(self) -> float:
        """(rho1 - rho2)/2: the constant slope of the density law."""
        return 0.5 * (self.rho1 - self.rho2)

    # --- potential ------------------------------------------------------------

    def psi(self, s):
        """Logarithmic double-well free energy density; defined on [-1, 1].

        The pure-phase limits psi(+-1) = theta*ln 2 - theta0/2 are taken
        continuously (s ln s -> 0).
        """
        s = np.asarray(s, dtype=np.float64)
        self._check_closed_domain(s)
        ent = xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s)
        return 0.5 * self.theta * ent - 0.5 * self.theta0 * s * s

    def psi0_prime(self, s):
        """Derivative of the convex logarithmic part."""
        s = np.asarray(s, dtype=np.float64)
        self._check_open_domain(s)
        return 0.5 * self.theta * (np.log1p(s) - np.log1p(-s))

    def psi0_second(self, s):
        s = np.asarray(s, dtype=np.float64)
        self._check_open_domain(s)
        return self.theta / (1.0 - s * s)

    def psi_prime(self, s):
        return self.psi0_prime(s) - self.theta0 * np.asarray(s, dtype=np.float64)

    def psi_second(self, s):
        return self.psi0_second(s) - self.theta0

    def _check_open_domain(self, s):
        if np.any(np.abs(s) >= 1.0):
            raise DomainError("potential derivative evaluated at |s| >= 1")

    @staticmethod
    def _check_closed_domain(s):
        if np.any(np.abs(s) > 1.0):
            raise DomainError("potential evaluated outside [-1, 1]")

    # --- mixing rules ----------------------------------------------------------

    def rho_of(self, s):
        s = self._clamped(s)
        return self.rho1 * 0.5 * (1.0 + s) + self.rho2 * 0.5 * (1.0 - s)

    def nu_of(self, s):
        s = self._clamped(s)
        return self.nu1 * 0.5 * (1.0 + s) + self.nu2 * 0.5 * (1.0 - s)

    def _clamped(self, s):
        s = np.asarray(s, dtype=np.float64)
        if np.any(np.abs(s) > 1.0):
            warnings.warn("mixing rule evaluated outside [-1, 1]; clamping",
                          stacklevel=3)
            s = np.clip(s, -1.0, 1.0)
        return s

    # --- gradient-energy coefficient and mobility -------------------------------

    def a_of(self, s):
        return _poly_eval(self.a_coeffs, np.asarray(s, dtype=np.float64))

    def a_prime(self, s):
        return _poly_eval(_poly_deriv(self.a_coeffs), np.asarray(s, dtype=np.float64))

    def b_of(self, s):
        return _poly_eval(self.b_coeffs, np.asarray(s, dtype=np.float64))

    def A_of(self, s) -> float:
        """Antiderivative of sqrt(a) from 0 to s (adaptive quadrature, 1e-12)."""
        s = float(s)
        if abs(s) > 1.0:
            raise DomainError("transform evaluated outside [-1, 1]")
        val, _ = quad(lambda r: np.sqrt(_poly_eval(self.a_coeffs, r)), 0.0, s,
                      epsabs=1e-12, epsrel=1e-12)
        return float(val)
