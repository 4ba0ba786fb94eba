"""Exact and PDE reference values for one-dimensional killed Brownian motion.

Kernels use the method of images; the PDE solver integrates the backward
equation ``u_r = sigma^2 u'' / 2 + b u'`` with zero boundary values by
Crank-Nicolson (with a few backward-Euler start-up steps to damp the
incompatibility between the data and the boundary condition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded
from scipy.special import erf

TERM_TOL = 1e-16
MAX_TERMS = 10_000


def _check_t(t: float) -> None:
    if not t > 0:
        raise ValueError("t must be positive")


def _gauss(z, var):
    return np.exp(-z * z / (2 * var)) / np.sqrt(2 * np.pi * var)


def halfline_kernel(t: float, x, y, sigma: float = 1.0):
    """Dirichlet heat kernel of ``sigma W`` on ``(0, inf)``."""
    _check_t(t)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    var = sigma * sigma * t
    return _gauss(x - y, var) - _gauss(x + y, var)


def halfline_kernel_dx(t: float, x, y, sigma: float = 1.0):
    _check_t(t)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    var = sigma * sigma * t
    return -(x - y) / var * _gauss(x - y, var) + (x + y) / var * _gauss(x + y, var)


def halfline_survival(t: float, x, sigma: float = 1.0):
    _check_t(t)
    return erf(np.asarray(x, dtype=float) / (sigma * math.sqrt(2 * t)))


def halfline_survival_dx(t: float, x, sigma: float = 1.0):
    _check_t(t)
    x = np.asarray(x, dtype=float)
    return np.sqrt(2 / (np.pi * sigma * sigma * t)) * np.exp(-x * x / (2 * sigma * sigma * t))


@dataclass(frozen=True)
class SeriesValue:
    value: float
    terms: int


def interval_kernel(t: float, x: float, y: float, a: float, b: float, sigma: float = 1.0,
                    derivative: bool = False) -> SeriesValue:
    """Image series on ``(a, b)``; summed until the last pair of terms is below ``1e-16``.

    ``terms`` counts the image pairs used (capped at ``10^4``).  With
    ``derivative`` the x-derivative of the kernel is returned instead.
    """
    _check_t(t)
    if not b > a:
        raise ValueError("need a < b")
    L = b - a
    xs, ys = x - a, y - a
    var = sigma * sigma * t

    def term(n: int) -> float:
        z1 = ys - xs + 2 * n * L
        z2 = ys + xs + 2 * n * L
        if derivative:
            return float(z1 / var * _gauss(z1, var) + z2 / var * _gauss(z2, var))
        return float(_gauss(z1, var) - _gauss(z2, var))

    parts = [term(0)]
    n = 1
    while n <= MAX_TERMS:
        pair = term(n) + term(-n)
        parts.append(pair)
        if abs(term(n)) < TERM_TOL and abs(term(-n)) < TERM_TOL:
            break
        n += 1
    return SeriesValue(math.fsum(parts), n)


class KernelOracle:
    """Semigroup and gradient of killed ``sigma W`` on the half-line or an interval by quadrature."""

    def __init__(self, geometry: str = "halfline", a: float = 0.0, b: float = math.inf, sigma: float = 1.0):
        if geometry not in ("halfline", "interval"):
            raise ValueError("geometry must be 'halfline' or 'interval'")
        if geometry == "interval" and not (math.isfinite(b) and b > a):
            raise ValueError("an interval needs finite a < b")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.geometry, self.a, self.b, self.sigma = geometry, a, b, sigma

    def density(self, t: float, x: float, y: float) -> float:
        if self.geometry == "halfline":
            return float(halfline_kernel(t, x - self.a, y - self.a, self.sigma))
        return interval_kernel(t, x, y, self.a, self.b, self.sigma).value

    def density_dx(self, t: float, x: float, y: float) -> float:
        if self.geometry == "halfline":
            return float(halfline_kernel_dx(t, x - self.a, y - self.a, self.sigma))
        return interval_kernel(t, x, y, self.a, self.b, self.sigma, derivative=True).value

    def _integrate(self, g: Callable[[float], float], t: float, x: float, breaks=()) -> float:
        hi = self.b if self.geometry == "interval" else x + 40 * self.sigma * math.sqrt(t)
        pts = sorted({p for p in (x, *breaks) if self.a < p < hi})
        edges = [self.a, *pts, hi]
        total = []
        for lo, up in zip(edges, edges[1:]):
            val, err = integrate.quad(g, lo, up, limit=400, epsabs=1e-13, epsrel=1e-12)
            if not math.isfinite(val) or err > 1e-8:
                raise ArithmeticError(f"kernel quadrature did not converge on [{lo}, {up}] (error {err:.2e})")
            total.append(val)
        return math.fsum(total)

    def semigroup(self, f: Callable[[float], float], t: float, x: float, breaks=()) -> float:
        return self._integrate(lambda y: self.density(t, x, y) * f(y), t, x, breaks)

    def gradient(self, f: Callable[[float], float], t: float, x: float, breaks=()) -> float:
        return self._integrate(lambda y: self.density_dx(t, x, y) * f(y), t, x, breaks)

    def gradient_richardson(self, f, t: float, x: float, h: float = 1e-3, breaks=()) -> float:
        """Richardson-extrapolated central difference of :meth:`semigroup` (cross-check)."""
        d = lambda s: (self.semigroup(f, t, x + s, breaks) - self.semigroup(f, t, x - s, breaks)) / (2 * s)
        return (4 * d(h / 2) - d(h)) / 3

    def total_mass(self, t: float, x: float) -> float:
        return self.semigroup(lambda y: 1.0, t, x)


@dataclass
class PDESolution:
    x: np.ndarray
    u: np.ndarray
    dx: float
    dt: float
    steps: int

    def at(self, x0: float) -> float:
        return float(np.interp(x0, self.x, self.u))


def pde_solve_1d(b: Callable[[np.ndarray], np.ndarray] | float, sigma: Callable[[np.ndarray], np.ndarray] | float,
                 domain: tuple[float, float], f: Callable[[np.ndarray], np.ndarray], t: float, dx: float,
                 dt: float | None = None, startup_steps: int = 4) -> PDESolution:
    """``u(t) ~ P_t f`` on a uniform grid of ``(a, b)`` with ``u = 0`` at both ends.

    Central differences in space; ``startup_steps`` backward-Euler half steps
    followed by Crank-Nicolson; banded LU for each solve.
    """
    _check_t(t)
    lo, hi = domain
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise ValueError("PDE domain must be a finite interval")
    n = int(round((hi - lo) / dx))
    if n < 2 or abs(n * dx - (hi - lo)) > 1e-9 * (hi - lo):
        raise ValueError(f"space step {dx} does not divide the interval length {hi - lo}")
    dt = dx if dt is None else dt
    steps = int(round(t / dt))
    if steps < 1 or abs(steps * dt - t) > 1e-9 * t:
        raise ValueError(f"time step {dt} does not divide t = {t}")
    x = lo + dx * np.arange(n + 1)
    xi = x[1:-1]
    bv = np.broadcast_to(np.asarray(b(xi) if callable(b) else b, dtype=float), xi.shape)
    sv = np.broadcast_to(np.asarray(sigma(xi) if callable(sigma) else sigma, dtype=float), xi.shape)
    if np.any(sv <= 0) or not np.all(np.isfinite(sv)):
        raise ValueError("sigma must be bounded below by a positive constant on the grid")
    diff = 0.5 * sv * sv / (dx * dx)
    adv = bv / (2 * dx)
    lower = diff - adv  # coefficient of u_{i-1}
    main = -2 * diff
    upper = diff + adv  # coefficient of u_{i+1}

    def apply(u):
        out = main * u
        out[1:] += lower[1:] * u[:-1]
        out[:-1] += upper[:-1] * u[1:]
        return out

    def banded(theta_dt):
        ab = np.zeros((3, len(xi)))
        ab[0, 1:] = -theta_dt * upper[:-1]
        ab[1] = 1 - theta_dt * main
        ab[2, :-1] = -theta_dt * lower[1:]
        return ab

    u = np.asarray(f(xi), dtype=float).copy()
    half = dt / 2
    n_start = min(startup_steps, 2 * steps)
    ab_be = banded(half)
    for _ in range(n_start):
        u = solve_banded((1, 1), ab_be, u)
    remaining = steps - n_start / 2
    ab_cn = banded(dt / 2)
    for _ in range(int(round(remaining))):
        u = solve_banded((1, 1), ab_cn, u + 0.5 * dt * apply(u))
    full = np.zeros(n + 1)
    full[1:-1] = u
    return PDESolution(x, full, dx, dt, steps)
