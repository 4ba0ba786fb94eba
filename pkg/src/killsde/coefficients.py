"""Drift and diffusion coefficients, singular decompositions and mollification.

Coefficient callables work on batches: ``x`` has shape ``(n, d)``, drifts
return ``(n, d)``, diffusions ``(n, d, m)``, drift Jacobians ``(n, d, d)``
with ``J[:, i, j] = d b_i / d x_j`` and diffusion Jacobians ``(n, d, m, d)``
with the differentiation index last.

Measure dependence goes through a *statistic*: a function of a
:class:`~killsde.measures.SubProbMeasure` returning a small array.  The drift
is then a classical function of ``(t, x, statistic)``, which lets the engine
compute the statistic once per time step instead of once per particle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

DriftFn = Callable[[float, np.ndarray, Any], np.ndarray]
MatrixFn = Callable[[float, np.ndarray], np.ndarray]


def fd_step(x: np.ndarray) -> np.ndarray:
    """Central-difference step 1e-5 * (1 + |x|), one per point."""
    return 1e-5 * (1.0 + np.linalg.norm(x, axis=1))


@dataclass(frozen=True)
class Coefficients:
    """Drift ``b(t, x[, mu])`` and diffusion ``sigma(t, x)`` of a killed SDE.

    Either ``sigma`` (a constant ``d x m`` matrix) or ``diffusion_fn`` must be
    given.  Missing Jacobians fall back to centered finite differences.
    """

    dim: int
    noise_dim: int
    drift_fn: DriftFn
    sigma: np.ndarray | None = None
    diffusion_fn: MatrixFn | None = None
    drift_jacobian_fn: DriftFn | None = None
    diffusion_jacobian_fn: MatrixFn | None = None
    statistic: Callable[[Any], Any] | None = None
    K: float | None = None
    tv_lipschitz: float | None = None
    singular: bool = False
    singular_spec: "SingularDriftSpec | None" = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sigma is None and self.diffusion_fn is None:
            raise ValueError("either a constant sigma or a diffusion function is required")
        if self.sigma is not None:
            s = np.array(self.sigma, dtype=float).reshape(self.dim, self.noise_dim)
            s.setflags(write=False)
            object.__setattr__(self, "sigma", s)
            a = s @ s.T
            if np.linalg.matrix_rank(a) < self.dim:
                raise ValueError("sigma sigma^T is degenerate")
            weight = s.T @ np.linalg.inv(a)
            weight.setflags(write=False)
            object.__setattr__(self, "_weight", weight)

    # -- evaluation ------------------------------------------------------
    @property
    def measure_dependent(self) -> bool:
        return self.statistic is not None

    @property
    def constant_diffusion(self) -> bool:
        return self.sigma is not None

    def measure_statistic(self, mu):
        """Statistic entering the drift; ``None`` when no measure is supplied."""
        if self.statistic is None or mu is None:
            return None
        return self.statistic(mu)

    def drift(self, t: float, x, mu=None) -> np.ndarray:
        return self.drift_given(t, x, self.measure_statistic(mu))

    def drift_given(self, t: float, x, stat) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.drift_fn(t, x, stat)

    def diffusion(self, t: float, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.sigma is not None:
            return np.broadcast_to(self.sigma, (x.shape[0], self.dim, self.noise_dim))
        return self.diffusion_fn(t, x)

    def drift_jacobian(self, t: float, x, stat=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.drift_jacobian_fn is not None:
            return self.drift_jacobian_fn(t, x, stat)
        if self.singular:
            raise ValueError(f"preset {self.name!r} has a singular drift; mollify it before differentiating")
        return _fd_jacobian(lambda y: self.drift_fn(t, y, stat), x, self.dim)

    def diffusion_jacobian(self, t: float, x) -> np.ndarray | None:
        """``None`` when the diffusion is constant (zero Jacobian)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.sigma is not None:
            return None
        if self.diffusion_jacobian_fn is not None:
            return self.diffusion_jacobian_fn(t, x)
        flat = lambda y: self.diffusion_fn(t, y).reshape(y.shape[0], -1)
        jac = _fd_jacobian(flat, x, self.dim)
        return jac.reshape(x.shape[0], self.dim, self.noise_dim, self.dim)

    def diffusivity(self, t: float, x) -> np.ndarray:
        s = self.diffusion(t, x)
        return np.einsum("nik,njk->nij", s, s)

    def noise_weight(self, t: float, x, v: np.ndarray) -> np.ndarray:
        """``(sigma^T a^{-1})(t, x) v`` with ``a = sigma sigma^T``; shape ``(n, m)``."""
        v = np.atleast_2d(v)
        if self.sigma is not None:
            return v @ self._weight.T
        s = self.diffusion(t, x)
        a = np.einsum("nik,njk->nij", s, s)
        y = np.linalg.solve(a, v[..., None])[..., 0]
        return np.einsum("ndm,nd->nm", s, y)

    def normal_variance(self, t: float, x, normals: np.ndarray) -> np.ndarray:
        """Variance rate ``n^T a n`` of the motion along each face normal; ``(n, F)``."""
        if self.sigma is not None:
            proj = np.einsum("nfd,dm->nfm", normals, self.sigma)
        else:
            proj = np.einsum("nfd,ndm->nfm", normals, self.diffusion(t, x))
        return np.sum(proj * proj, axis=2)

    def ellipticity(self, t: float, points) -> tuple[float, float]:
        """Sampled ``(max ||a||, max ||a^{-1}||)``; raises on a degenerate point."""
        a = self.diffusivity(t, points)
        eig = np.linalg.eigvalsh(a)
        if np.any(eig[:, 0] <= 0) or not np.all(np.isfinite(eig)):
            raise ValueError("sigma sigma^T is not positive definite at a sampled point")
        return float(eig[:, -1].max()), float((1.0 / eig[:, 0]).max())

    def sup_noise_weight(self, t: float = 0.0, points=None) -> float:
        """Operator norm of ``sigma^T a^{-1}`` (sampled when sigma varies)."""
        if self.sigma is not None:
            return float(np.linalg.norm(self._weight, 2))
        if points is None:
            raise ValueError("points are required for a state-dependent diffusion")
        pts = np.atleast_2d(points)
        s = self.diffusion(t, pts)
        a = np.einsum("nik,njk->nij", s, s)
        w = np.einsum("ndm,nde->nme", s, np.linalg.inv(a))
        return float(np.max(np.linalg.norm(w, ord=2, axis=(1, 2))))


def _fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dim: int) -> np.ndarray:
    h = fd_step(x)
    cols = []
    for j in range(dim):
        e = np.zeros_like(x)
        e[:, j] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h[:, None]))
    return np.stack(cols, axis=2)


# ---------------------------------------------------------------------------
# singular drifts and the mixed-norm machinery
# ---------------------------------------------------------------------------


def kappa_check(p: float, q: float, d: int) -> bool:
    """Membership of ``(p, q)`` in the class with ``p, q > 2`` and ``d/p + 2/q < 1``."""
    if not (p > 0 and q > 0 and d >= 1):
        raise ValueError("p, q and d must be positive")
    return p > 2 and q > 2 and d / p + 2 / q < 1


@dataclass(frozen=True)
class SingularPart:
    fn: Callable[[float, np.ndarray], np.ndarray]
    p: float
    q: float


@dataclass(frozen=True)
class SingularDriftSpec:
    """``b = regular + sum(singular parts)`` with attached integrability exponents.

    ``regular`` has the drift signature ``(t, x, stat)``; its Jacobian is
    ``regular_jacobian`` (finite differences if omitted).  ``envelopes`` are
    the gradient envelopes ``f_j`` of the diffusivity, kept for reporting.
    """

    dim: int
    regular: DriftFn
    singular: tuple[SingularPart, ...]
    regular_jacobian: DriftFn | None = None
    envelopes: tuple[SingularPart, ...] = ()
    time_dependent: bool = False
    singular_points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        for part in self.singular + self.envelopes:
            if not kappa_check(part.p, part.q, self.dim):
                raise ValueError(f"exponents (p, q) = ({part.p}, {part.q}) violate d/p + 2/q < 1")

    def singular_value(self, t: float, x: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], self.dim))
        for part in self.singular:
            out += part.fn(t, x)
        return out


@dataclass(frozen=True)
class LTildeNorm:
    value: float
    time_nodes: int
    space_nodes: int


def ltilde_norm(
    f: Callable[[float, np.ndarray], np.ndarray],
    p: float,
    q: float,
    centers: Sequence,
    s: float = 0.0,
    t: float = 1.0,
    *,
    dim: int = 1,
    time_nodes: int = 8,
    space_nodes: int = 64,
    singular_points: Sequence[float] = (),
) -> LTildeNorm:
    """Localized mixed norm ``sup_z (int_s^t (int_{B(z,1)} |f|^p dx)^{q/p} du)^{1/q}``.

    The supremum runs over the supplied ``centers``.  In one dimension the
    inner integral is adaptive (``space_nodes`` is the subdivision limit and
    ``singular_points`` are passed as break points); a non-integrable
    singularity makes the integrator fail and the norm is reported as
    ``inf``.  For ``d >= 2`` the ball is covered by a tensor Gauss-Legendre
    grid with ``space_nodes`` points per axis, and divergence is flagged when
    halving the resolution changes the value by more than 50%.
    """
    centers = [np.atleast_1d(np.asarray(z, dtype=float)) for z in centers]
    if not centers:
        raise ValueError("at least one center is required")
    if not (p > 1 and q > 1):
        raise ValueError("need p, q in (1, inf)")
    u_nodes, u_weights = np.polynomial.legendre.leggauss(time_nodes)
    us = s + (t - s) * (u_nodes + 1) / 2
    uw = (t - s) / 2 * u_weights

    def inner(u: float, z: np.ndarray, nodes: int) -> float:
        if dim == 1:
            lo, hi = z[0] - 1, z[0] + 1
            pts = [c for c in singular_points if lo < c < hi] or None
            g = lambda x: abs(float(f(u, np.array([[x]]))[0])) ** p
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    val, _ = integrate.quad(g, lo, hi, points=pts, limit=nodes)
                except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError):
                    return math.inf
            return val
        x1, w1 = np.polynomial.legendre.leggauss(nodes)
        grid = np.array(list(product(x1, repeat=dim)))
        weights = np.prod(np.array(list(product(w1, repeat=dim))), axis=1)
        inside = np.sum(grid**2, axis=1) <= 1.0
        vals = np.abs(f(u, z + grid[inside])) ** p
        return float(np.sum(weights[inside] * vals))

    best = 0.0
    for z in centers:
        total = 0.0
        for u, w in zip(us, uw):
            val = inner(u, z, space_nodes)
            if dim > 1 and math.isfinite(val):
                coarse = inner(u, z, max(space_nodes // 2, 2))
                if coarse > 0 and val > 1.5 * coarse:
                    val = math.inf
            if not math.isfinite(val):
                return LTildeNorm(math.inf, time_nodes, space_nodes)
            total += w * val ** (q / p)
        best = max(best, total ** (1 / q))
    return LTildeNorm(best, time_nodes, space_nodes)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def _bump(z: np.ndarray) -> np.ndarray:
    r2 = np.sum(z * z, axis=-1)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def _bump_grad(z: np.ndarray) -> np.ndarray:
    r2 = np.sum(z * z, axis=-1)
    out = np.zeros_like(z)
    inside = r2 < 1.0
    g = np.exp(-1.0 / (1.0 - r2[inside]))
    out[inside] = (-2.0 * g / (1.0 - r2[inside]) ** 2)[:, None] * z[inside]
    return out


def bump_kernel_nodes(dim: int, n: int, nodes_per_axis: int, time_axis: bool):
    """Quadrature for the space-time bump of radius ``1/n`` and unit mass.

    Returns ``(shifts_t, shifts_x, weights, grad_weights)``.  The weights sum
    to one exactly; ``grad_weights[:, j]`` integrates against ``d/dy_j`` of
    the scaled kernel.  Without a time axis the time coordinate is
    integrated out (time-homogeneous fields).
    """
    x1, w1 = np.polynomial.legendre.leggauss(nodes_per_axis)
    z = np.array(list(product(x1, repeat=dim + 1)))
    w = np.prod(np.array(list(product(w1, repeat=dim + 1))), axis=1)
    g = _bump(z)
    keep = g > 0
    z, w, g = z[keep], w[keep], g[keep]
    mass = np.sum(w * g)
    weights = w * g / mass
    grad = (w[:, None] * _bump_grad(z)[:, 1:]) / mass * n
    if not time_axis:
        # merge nodes sharing a spatial position
        keys, inverse = np.unique(np.round(z[:, 1:], 14), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        merged = np.zeros(len(keys))
        np.add.at(merged, inverse, weights)
        merged_grad = np.zeros((len(keys), dim))
        np.add.at(merged_grad, inverse, grad)
        merged /= merged.sum()
        return np.zeros(len(keys)), keys / n, merged, merged_grad
    return z[:, 0] / n, z[:, 1:] / n, weights, grad


class GridField:
    """Multilinear interpolation of a tabulated field on a regular grid.

    ``axes`` are 1-D increasing arrays (time first when present); ``values``
    has shape ``(len(axis_0), ..., len(axis_k), *value_shape)``.
    """

    def __init__(self, axes: Sequence[np.ndarray], values: np.ndarray):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])

    def covers(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        idx, frac = [], []
        for k, ax in enumerate(self.axes):
            if len(ax) == 1:
                idx.append(np.zeros(len(pts), dtype=int))
                frac.append(np.zeros(len(pts)))
                continue
            i = np.clip(np.searchsorted(ax, pts[:, k], side="right") - 1, 0, len(ax) - 2)
            fr = np.clip((pts[:, k] - ax[i]) / (ax[i + 1] - ax[i]), 0.0, 1.0)
            idx.append(i)
            frac.append(fr)
        out = 0.0
        for corner in product((0, 1), repeat=len(self.axes)):
            weight = np.ones(len(pts))
            sel = []
            for k, c in enumerate(corner):
                if len(self.axes[k]) == 1:
                    if c:
                        weight = weight * 0.0
                    sel.append(idx[k])
                    continue
                weight = weight * (frac[k] if c else 1.0 - frac[k])
                sel.append(idx[k] + c)
            vals = self.values[tuple(sel)]
            out = out + weight.reshape((-1,) + (1,) * (vals.ndim - 1)) * vals
        return out


def mollify(
    source: "SingularDriftSpec | Coefficients",
    n: int,
    region: tuple[Sequence[float], Sequence[float]],
    *,
    horizon: float = 1.0,
    spacing: float | None = None,
    nodes_per_axis: int | None = None,
    grid_axes: Sequence[np.ndarray] | None = None,
) -> Coefficients:
    """Space-time convolution of a drift with the bump kernel of radius ``1/n``.

    ``source`` is either a :class:`SingularDriftSpec` (only the singular parts
    are smoothed, the regular part is kept) or a singular preset carrying
    one.  The smoothed field and its Jacobian (the convolution with the
    kernel gradient) are tabulated over ``region`` -- a box ``(lo, hi)`` --
    and interpolated multilinearly.  Outside the tabulated box the raw
    singular field is used, so the box must contain every singular point with
    room to spare.  Time is clamped to ``[0, horizon]`` before evaluation.
    """
    if n <= 0:
        raise ValueError("mollification index n must be a positive integer")
    base: Coefficients | None = None
    if isinstance(source, Coefficients):
        if source.singular_spec is None:
            raise ValueError("coefficients carry no singular decomposition to mollify")
        base, spec = source, source.singular_spec
    else:
        spec = source
    d = spec.dim
    lo = np.asarray(region[0], dtype=float).reshape(d)
    hi = np.asarray(region[1], dtype=float).reshape(d)
    if spacing is None:
        spacing = 1.0 / (10 * n)
    if nodes_per_axis is None:
        nodes_per_axis = 16 if d == 1 else 10
    if grid_axes is None:
        pad = 1.0 / n
        grid_axes = [np.arange(lo[k] - pad, hi[k] + pad + spacing / 2, spacing) for k in range(d)]
        if spec.time_dependent:
            grid_axes = [np.linspace(0.0, horizon, max(int(round(horizon / spacing)), 1) + 1)] + grid_axes
    grid_axes = [np.asarray(a, dtype=float) for a in grid_axes]
    space_axes = grid_axes[1:] if spec.time_dependent else grid_axes
    pad = 1.0 / n
    for k, ax in enumerate(space_axes):
        if ax[0] > lo[k] - pad + 1e-12 or ax[-1] < hi[k] + pad - 1e-12:
            raise ValueError(f"grid axis {k} does not cover the region padded by 1/n")
    if spec.time_dependent and (grid_axes[0][0] > 1e-12 or grid_axes[0][-1] < horizon - 1e-12):
        raise ValueError("time axis does not cover [0, horizon]")

    shift_t, shift_x, weights, grad_weights = bump_kernel_nodes(d, n, nodes_per_axis, spec.time_dependent)
    mesh = np.stack(np.meshgrid(*space_axes, indexing="ij"), axis=-1).reshape(-1, d)
    times = grid_axes[0] if spec.time_dependent else np.array([0.0])
    shape = tuple(len(a) for a in space_axes)
    val_tab = np.zeros((len(times), mesh.shape[0], d))
    jac_tab = np.zeros((len(times), mesh.shape[0], d, d))
    for ti, t in enumerate(times):
        for st, sx, w, gw in zip(shift_t, shift_x, weights, grad_weights):
            tt = min(max(t + st, 0.0), horizon)
            vals = spec.singular_value(tt, mesh + sx)
            val_tab[ti] += w * vals
            jac_tab[ti] -= vals[:, :, None] * gw[None, None, :]
    if spec.time_dependent:
        value_field = GridField(grid_axes, val_tab.reshape((len(times),) + shape + (d,)))
        jac_field = GridField(grid_axes, jac_tab.reshape((len(times),) + shape + (d, d)))
    else:
        value_field = GridField(grid_axes, val_tab[0].reshape(shape + (d,)))
        jac_field = GridField(grid_axes, jac_tab[0].reshape(shape + (d, d)))

    def _query(t, x):
        if spec.time_dependent:
            tt = np.full((x.shape[0], 1), min(max(t, 0.0), horizon))
            return np.hstack([tt, x])
        return x

    def drift(t, x, stat):
        out = spec.regular(t, x, stat).astype(float, copy=True)
        q = _query(t, x)
        inside = value_field.covers(q)
        if np.all(inside):
            return out + value_field(q)
        out[inside] += value_field(q[inside])
        out[~inside] += spec.singular_value(t, x[~inside])
        return out

    def jacobian(t, x, stat):
        if spec.regular_jacobian is not None:
            out = spec.regular_jacobian(t, x, stat).astype(float, copy=True)
        else:
            out = _fd_jacobian(lambda y: spec.regular(t, y, stat), x, d)
        q = _query(t, x)
        inside = value_field.covers(q)
        out[inside] += jac_field(q[inside])
        if not np.all(inside):
            outside = ~inside
            out[outside] += _fd_jacobian(lambda y: spec.singular_value(t, y), x[outside], d)
        return out

    if base is not None:
        return replace(base, drift_fn=drift, drift_jacobian_fn=jacobian, singular=False,
                       name=f"{base.name}@n={n}", params={**base.params, "mollify_n": n})
    return Coefficients(dim=d, noise_dim=d, drift_fn=drift, sigma=np.eye(d),
                        drift_jacobian_fn=jacobian, name=f"mollified@n={n}", params={"mollify_n": n})


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _unit_vector(direction, dim: int) -> np.ndarray:
    if direction is None:
        u = np.zeros(dim)
        u[0] = 1.0
        return u
    u = np.asarray(direction, dtype=float).reshape(dim)
    return u / np.linalg.norm(u)


def _zero_jac(t, x, stat):
    return np.zeros((x.shape[0], x.shape[1], x.shape[1]))


def _linear(theta: float):
    def drift(t, x, stat):
        return -theta * x

    def jac(t, x, stat):
        d = x.shape[1]
        return np.broadcast_to(-theta * np.eye(d), (x.shape[0], d, d)).copy()

    return drift, jac


def _power_envelope(kappa: float, gamma: float, cap: float, center: np.ndarray):
    def envelope(x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x - center, axis=1)
        with np.errstate(divide="ignore"):
            val = np.where(r > 0, r ** (-gamma), np.inf)
        return kappa * np.minimum(cap, val)

    return envelope


def clipped_mean(clip: float):
    """Mean of the atoms clipped to ``[-clip, clip]``; killed mass contributes 0."""

    def stat(mu) -> np.ndarray:
        if len(mu.weights) == 0:
            return np.zeros(mu.dim)
        clipped = np.clip(mu.atoms, -clip, clip)
        return np.array([math.fsum(col) for col in (mu.weights[:, None] * clipped).T])

    return stat


def total_mass(mu) -> float:
    return math.fsum(mu.weights)


def boundary_profile_mass(domain):
    """``mu(rho_boundary ^ 1)``: 1-Lipschitz for the truncated Wasserstein cost."""

    def stat(mu) -> float:
        if len(mu.weights) == 0:
            return 0.0
        return math.fsum(mu.weights * np.minimum(domain.distance_to_boundary(mu.atoms), 1.0))

    return stat


PRESETS = ("ou", "constant", "indicator-kick", "singular-power", "mean-field-attraction",
           "mass-drift", "singular-mean-field")


def preset(name: str, dim: int = 1, **params) -> Coefficients:
    """Named coefficient sets.

    ``ou``                    b = -theta x, sigma = s I
    ``constant``              b = c, sigma = s I
    ``indicator-kick``        b = kappa 1{lo <= <u,x> <= hi} u
    ``singular-power``        b = -theta x + kappa min(M, |x - z|^-gamma) u
    ``mean-field-attraction`` b = -x + kappa * (clipped mean of mu)
    ``mass-drift``            b = kappa mu(D) u
    ``singular-mean-field``   b = -x + kappa min(M, |x - z|^-gamma) mu(rho ^ 1) u   (needs ``domain``)
    """
    s = float(params.pop("s", 1.0))
    sigma = s * np.eye(dim)
    K_sigma = s**2 + 1.0 / s**2
    if name == "ou":
        theta = float(params.pop("theta", 1.0))
        drift, jac = _linear(theta)
        return Coefficients(dim, dim, drift, sigma=sigma, drift_jacobian_fn=jac, K=K_sigma + theta,
                            name=name, params={"theta": theta, "s": s, **params})
    if name == "constant":
        c = np.asarray(params.pop("c", np.zeros(dim)), dtype=float).reshape(dim)
        drift = lambda t, x, stat: np.broadcast_to(c, x.shape).copy()
        return Coefficients(dim, dim, drift, sigma=sigma, drift_jacobian_fn=_zero_jac, K=K_sigma,
                            name=name, params={"c": c.tolist(), "s": s})
    if name == "indicator-kick":
        kappa = float(params.pop("kappa", 1.0))
        lo, hi = float(params.pop("lo", 0.0)), float(params.pop("hi", 1.0))
        u = _unit_vector(params.pop("direction", None), dim)

        def kick(t, x):
            proj = x @ u
            return kappa * ((proj >= lo) & (proj <= hi)).astype(float)[:, None] * u

        spec = SingularDriftSpec(dim, regular=lambda t, x, stat: np.zeros_like(x),
                                 singular=(SingularPart(kick, 4.0 * dim, 8.0),),
                                 regular_jacobian=_zero_jac)
        return Coefficients(dim, dim, lambda t, x, stat: kick(t, x), sigma=sigma, K=K_sigma, singular=True,
                            singular_spec=spec, name=name,
                            params={"kappa": kappa, "lo": lo, "hi": hi, "direction": u.tolist(), "s": s})
    if name == "singular-power":
        theta = float(params.pop("theta", 0.0))
        kappa = float(params.pop("kappa", 1.0))
        gamma = float(params.pop("gamma", 0.2))
        cap = float(params.pop("cap", 10.0))
        z = np.asarray(params.pop("center", np.zeros(dim)), dtype=float).reshape(dim)
        u = _unit_vector(params.pop("direction", None), dim)
        env = _power_envelope(kappa, gamma, cap, z)
        p = 4.0 * dim
        if gamma * p >= dim:
            raise ValueError("gamma too large: |x|^-gamma must lie in L^p_loc with d/p + 2/q < 1")
        reg, reg_jac = _linear(theta)
        sing = lambda t, x: env(x)[:, None] * u
        spec = SingularDriftSpec(dim, regular=reg, singular=(SingularPart(sing, p, 8.0),),
                                 regular_jacobian=reg_jac, singular_points=(tuple(z),))
        return Coefficients(dim, dim, lambda t, x, stat: reg(t, x, stat) + sing(t, x), sigma=sigma,
                            K=K_sigma + theta, singular=True, singular_spec=spec, name=name,
                            params={"theta": theta, "kappa": kappa, "gamma": gamma, "cap": cap,
                                    "center": z.tolist(), "direction": u.tolist(), "s": s})
    if name == "mean-field-attraction":
        kappa = float(params.pop("kappa", 0.2))
        clip = float(params.pop("clip", 5.0))

        def drift(t, x, stat):
            out = -x
            if stat is not None:
                out = out + kappa * np.asarray(stat)
            return out

        jac = _linear(1.0)[1]
        return Coefficients(dim, dim, drift, sigma=sigma, drift_jacobian_fn=lambda t, x, stat: jac(t, x, stat),
                            statistic=clipped_mean(clip), K=K_sigma + 1.0,
                            tv_lipschitz=kappa * clip * math.sqrt(dim), name=name,
                            params={"kappa": kappa, "clip": clip, "s": s})
    if name == "mass-drift":
        kappa = float(params.pop("kappa", 1.0))
        u = _unit_vector(params.pop("direction", None), dim)

        def drift(t, x, stat):
            m = 0.0 if stat is None else float(stat)
            return np.broadcast_to(kappa * m * u, x.shape).copy()

        return Coefficients(dim, dim, drift, sigma=sigma, drift_jacobian_fn=_zero_jac, statistic=total_mass,
                            K=K_sigma, tv_lipschitz=abs(kappa), name=name,
                            params={"kappa": kappa, "direction": u.tolist(), "s": s})
    if name == "singular-mean-field":
        domain = params.pop("domain", None)
        if domain is None:
            raise ValueError("preset 'singular-mean-field' needs the domain")
        kappa = float(params.pop("kappa", 0.5))
        gamma = float(params.pop("gamma", 0.2))
        cap = float(params.pop("cap", 10.0))
        z = np.asarray(params.pop("center", np.zeros(dim)), dtype=float).reshape(dim)
        u = _unit_vector(params.pop("direction", None), dim)
        env = _power_envelope(kappa, gamma, cap, z)

        def drift(t, x, stat):
            out = -x
            if stat is not None:
                out = out + (env(x) * float(stat))[:, None] * u
            return out

        def jac(t, x, stat):
            n, d = x.shape
            out = np.broadcast_to(-np.eye(d), (n, d, d)).copy()
            if stat is not None:
                diff = x - z
                r = np.linalg.norm(diff, axis=1)
                # the capped envelope is flat where the cap is active
                active = (r > 0) & (r ** (-gamma) < cap) if gamma > 0 else np.zeros(n, dtype=bool)
                grad = np.zeros((n, d))
                grad[active] = (-gamma * kappa * r[active] ** (-gamma - 2))[:, None] * diff[active]
                out += float(stat) * u[None, :, None] * grad[:, None, :]
            return out

        return Coefficients(dim, dim, drift, sigma=sigma, drift_jacobian_fn=jac,
                            statistic=boundary_profile_mass(domain),
                            K=K_sigma + 1.0, singular=True, name=name,
                            params={"kappa": kappa, "gamma": gamma, "cap": cap, "center": z.tolist(),
                                    "direction": u.tolist(), "s": s})
    raise ValueError(f"unknown coefficient preset {name!r}; choose from {', '.join(PRESETS)}")
