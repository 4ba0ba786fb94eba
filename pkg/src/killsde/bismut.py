"""Bismut-type gradient estimator for killed semigroups.

The weight process decays from 1 to 0 along a time change driven by the
clock ``S = int g^{-2}(X_s) ds``, where ``g = h(distance to boundary)`` and
``h`` is a C^2 cutoff.  Near the boundary the clock runs fast, so the weight
is exhausted before the path can be killed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import Coefficients
from .domain import Domain
from .engine import EnsembleSpec, KilledPath, TimeGrid, VariationPath, simulate_variation
from .rng import DEFAULT_SEED, stable_mean, stable_mean_se

Payoff = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------


def _blend(s):
    """Quintic pieces on [0, 1]: ``H`` (H(0)=0, H'(0)=1, zero 2-jets elsewhere) and ``S`` (smoothstep)."""
    s2 = s * s
    H = s * (1 + s2 * (-6 + s * (8 - 3 * s)))
    S = s2 * s * (10 + s * (-15 + 6 * s))
    dH = 1 + s2 * (-18 + s * (32 - 15 * s))
    dS = 30 * s2 * (1 + s * (-2 + s))
    return H, S, dH, dS


def _cutoff(r, r1: float, need_derivative: bool = True):
    if not r1 > 0:
        raise ValueError("cutoff radius r1 must be positive")
    if r1 > 1:
        raise ValueError("cutoff radius r1 must not exceed 1 (h would leave [0, 1] or lose monotonicity)")
    r = np.asarray(r, dtype=float)
    shape = r.shape
    r = r.reshape(-1)
    if np.any(r < 0):
        raise ValueError("h is defined for r >= 0")
    half = r1 / 2
    val = np.minimum(r, 1.0)
    val[r >= r1] = 1.0
    der = None
    if need_derivative:
        der = np.where(r <= half, 1.0, 0.0)
    mid = (r > half) & (r < r1)
    if np.any(mid):
        s = (r[mid] - half) / half
        H, S, dH, dS = _blend(s)
        amp = (1 - half) / half
        val[mid] = half + half * (H + amp * S)
        if need_derivative:
            der[mid] = dH + amp * dS
    return val.reshape(shape), None if der is None else der.reshape(shape)


def smooth_cutoff_h(r, r1: float):
    """C^2 profile: identity on ``[0, r1/2]``, 1 on ``[r1, inf)``, quintic in between."""
    val, _ = _cutoff(r, r1)
    return float(val) if np.ndim(val) == 0 else val


def smooth_cutoff_dh(r, r1: float):
    _, der = _cutoff(r, r1)
    return float(der) if np.ndim(der) == 0 else der


def cutoff_g(domain: Domain, x, r1: float | None = None) -> np.ndarray:
    """``g = h(rho_boundary(x))`` with the domain's cutoff radius by default."""
    r1 = domain.r1 if r1 is None else r1
    rho = np.asarray(domain.distance_to_boundary(x), dtype=float)
    return _cutoff(rho, r1)[0]


def comparison_constant(domain: Domain, points, r1: float | None = None) -> float:
    """Sampled ``C0`` with ``1/C0 <= g / (rho ^ 1) <= C0`` over interior points."""
    pts = np.atleast_2d(points)
    rho = domain.distance_to_boundary(pts)
    pts = pts[rho > 0]
    rho = rho[rho > 0]
    ratio = cutoff_g(domain, pts, r1) / np.minimum(rho, 1.0)
    return float(max(ratio.max(), 1.0 / ratio.min()))


# ---------------------------------------------------------------------------
# weight process
# ---------------------------------------------------------------------------


@dataclass
class BetaClock:
    """Discrete clock and weight along a batch of paths.

    ``g`` and ``clock`` live on nodes ``(n, K+1)``; ``beta`` on nodes;
    ``beta_prime`` on steps ``(n, K)`` (slope over ``[t_k, t_{k+1}]``).
    ``exhaust`` is the first node where the clock reaches ``t`` (``-1`` if
    never), ``stop`` the first node with ``beta = 0``.
    """

    t: float
    r1: float
    t_index: int
    g: np.ndarray
    clock: np.ndarray
    beta: np.ndarray
    beta_prime: np.ndarray
    exhaust: np.ndarray
    stop: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        """Per-path ``sum beta'^2 dt`` (the discrete ``int |beta'|^2 ds``)."""
        dt = self.t / self.t_index
        return np.sum(self.beta_prime**2, axis=1) * dt


def build_beta(path: KilledPath, domain: Domain, t: float, r1: float | None = None) -> BetaClock:
    """Weight ``beta_s = 1 - min(S_s, t)/t`` on the grid, clamped to 0 at death and at ``t``.

    The slope on step ``k`` is ``-(1/t) g_k^{-2} phi_k`` with ``phi_k`` the
    fraction of the step needed to exhaust the clock, so ``beta`` is
    piecewise linear, reaches 0 exactly at the exhausting node, and each
    slope only depends on the state at the left node.
    """
    grid = path.grid
    if not (0 < t <= grid.horizon * (1 + 1e-12)):
        raise ValueError(f"t = {t} outside (0, horizon = {grid.horizon}]")
    kt = grid.node(t)
    r1 = domain.r1 if r1 is None else r1
    dt = grid.dt
    n = path.n
    states = path.states[:, : kt + 1]
    alive = path.alive[:, : kt + 1]
    rho = np.abs(domain._signed(states.reshape(-1, domain.dim))).reshape(n, kt + 1)
    g = _cutoff(rho, r1, need_derivative=False)[0]
    g[~alive] = 0.0
    with np.errstate(divide="ignore"):
        rate = np.where(alive[:, :kt], 1.0 / g[:, :kt] ** 2, 0.0)
    clock = np.zeros((n, kt + 1))
    np.cumsum(rate * dt, axis=1, out=clock[:, 1:])
    remaining = np.clip(t - clock[:, :kt], 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(rate > 0, np.clip(remaining / (rate * dt), 0.0, 1.0), 0.0)
    beta_prime = -(1.0 / t) * rate * phi
    beta = np.empty((n, kt + 1))
    beta[:, 0] = 1.0
    beta[:, 1:] = 1.0 - np.minimum(clock[:, 1:], t) / t
    beta[~alive] = 0.0
    beta[:, kt] = 0.0
    beta[:, 0] = 1.0
    beta = np.minimum.accumulate(beta, axis=1)
    reached = clock >= t
    exhaust = np.where(reached.any(axis=1), reached.argmax(axis=1), -1)
    zero = beta <= 0
    stop = np.where(zero.any(axis=1), zero.argmax(axis=1), kt)
    return BetaClock(t, r1, kt, g, clock, beta, beta_prime, exhaust, stop)


def bismut_integral(path: KilledPath, variation: VariationPath, beta: BetaClock, coeffs: Coefficients) -> np.ndarray:
    """Per-path left-point sum ``sum_k beta'_k <(sigma^T a^{-1})(X_k) v_k, dW_k>``."""
    kt = beta.t_index
    if variation.v.shape[:2] != path.states.shape[:2] or beta.beta_prime.shape != (path.n, kt):
        raise ValueError("path, variation and weight do not share the same grid")
    dt = path.grid.dt
    n, d = path.n, coeffs.dim
    total = np.zeros(n)
    if coeffs.constant_diffusion:
        w = np.einsum("nkd,md->nkm", variation.v[:, :kt], coeffs._weight)
        inc = np.einsum("nkm,nkm->nk", w, path.dW[:, :kt])
        return np.sum(beta.beta_prime * inc, axis=1)
    for k in range(kt):
        live = beta.beta_prime[:, k] != 0
        if not np.any(live):
            continue
        w = coeffs.noise_weight(k * dt, path.states[live, k], variation.v[live, k])
        total[live] += beta.beta_prime[live, k] * np.einsum("nm,nm->n", w, path.dW[live, k])
    return total


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass
class GradientEstimate:
    value: float
    std_error: float
    n: int
    survivors: int
    semigroup_value: float
    semigroup_std_error: float
    params: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n": self.n, "survivors": self.survivors,
                "semigroup_value": self.semigroup_value, "semigroup_std_error": self.semigroup_std_error,
                "params": self.params}


@dataclass
class BismutTerms:
    """Per-path pieces of the estimator at one time ``t``."""

    semigroup: np.ndarray  # 1{t < tau} f(X_t)
    gradient: np.ndarray  # -1{t < tau} f(X_t) * integral
    integral: np.ndarray
    energy: np.ndarray
    survived: np.ndarray


def _payoff_values(f: Payoff, x: np.ndarray, alive: np.ndarray) -> np.ndarray:
    out = np.zeros(len(x))
    if np.any(alive):
        out[alive] = np.asarray(f(x[alive]), dtype=float).reshape(-1)
    return out


def bismut_terms(path: KilledPath, variation: VariationPath, coeffs: Coefficients, domain: Domain,
                 f: Payoff, t: float, r1: float | None = None) -> BismutTerms:
    beta = build_beta(path, domain, t, r1)
    integral = bismut_integral(path, variation, beta, coeffs)
    kt = beta.t_index
    survived = path.alive[:, kt]
    fx = _payoff_values(f, path.states[:, kt], survived)
    return BismutTerms(fx, -fx * integral, integral, beta.energy, survived)


def _stack_terms(parts: Sequence[BismutTerms]) -> BismutTerms:
    return BismutTerms(*(np.concatenate([getattr(p, name) for p in parts])
                         for name in ("semigroup", "gradient", "integral", "energy", "survived")))


def _estimate_from_terms(terms: BismutTerms, params: dict) -> GradientEstimate:
    value, se = stable_mean_se(terms.gradient)
    sg, sg_se = stable_mean_se(terms.semigroup)
    return GradientEstimate(value, se, len(terms.gradient), int(terms.survived.sum()), sg, sg_se, params)


def collect_terms(spec: EnsembleSpec, f: Payoff, v, ts: Sequence[float], r1: float | None = None) -> list[BismutTerms]:
    """Simulate ``spec`` chunk by chunk and return the per-path terms for each ``t``."""
    v = np.asarray(v, dtype=float)

    def per_chunk(paths: KilledPath):
        var = simulate_variation(paths, spec.coeffs, v)
        return [bismut_terms(paths, var, spec.coeffs, spec.domain, f, t, r1) for t in ts]

    chunks = spec.map(per_chunk)
    return [_stack_terms([c[i] for c in chunks]) for i in range(len(ts))]


def estimate_gradient(ensemble, f: Payoff, v, t: float, *, coeffs: Coefficients | None = None,
                      domain: Domain | None = None, variation: VariationPath | None = None,
                      r1: float | None = None, epsilon: float = 1.0) -> GradientEstimate:
    """Monte Carlo value of ``grad_v P_t f`` and of ``P_t f`` from a single start point.

    ``ensemble`` is either an :class:`EnsembleSpec` (simulated chunk-wise) or
    a stored :class:`KilledPath`, in which case ``coeffs`` and ``domain`` are
    required and ``variation`` is recomputed when not supplied.  ``epsilon``
    is carried for diagnostics only.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(ensemble, EnsembleSpec):
        terms = collect_terms(ensemble, f, v, [t], r1)[0]
        r1_used = ensemble.domain.r1 if r1 is None else r1
    else:
        if coeffs is None or domain is None:
            raise ValueError("coeffs and domain are required with a stored ensemble")
        if ensemble.n == 0:
            raise ValueError("empty ensemble")
        variation = simulate_variation(ensemble, coeffs, v) if variation is None else variation
        terms = bismut_terms(ensemble, variation, coeffs, domain, f, t, r1)
        r1_used = domain.r1 if r1 is None else r1
    return _estimate_from_terms(terms, {"t": t, "v": v.tolist(), "epsilon": epsilon, "r1": r1_used})


def fd_gradient_crn(x, v, h: float, f: Payoff, t: float, coeffs: Coefficients, domain: Domain, *,
                    N: int, dt: float, seed: int = DEFAULT_SEED, bridge: bool = True, threads: int = 1
                    ) -> GradientEstimate:
    """Central difference of ``P_t f`` at ``x +- (h/2) v`` with common random numbers."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    xp, xm = x + 0.5 * h * v, x - 0.5 * h * v
    if not (domain.contains(xp) and domain.contains(xm)):
        raise ValueError("perturbed points x +- (h/2) v leave the domain")
    grid = TimeGrid(t, dt)
    vals = []
    for start in (xp, xm):
        spec = EnsembleSpec(coeffs, domain, grid, N, x0=start, seed=seed, bridge=bridge, threads=threads)
        vals.append(np.concatenate(spec.map(lambda p: _payoff_values(f, p.states[:, -1], p.alive[:, -1]))))
    diff = (vals[0] - vals[1]) / h
    value, se = stable_mean_se(diff)
    sg, sg_se = stable_mean_se(0.5 * (vals[0] + vals[1]))
    survivors = int(np.count_nonzero(vals[0]) + np.count_nonzero(vals[1]))
    return GradientEstimate(value, se, N, survivors, sg, sg_se, {"t": t, "v": v.tolist(), "h": h})


@dataclass
class BoundRow:
    x: tuple
    t: float
    rho: float
    gradient: float
    gradient_se: float
    semigroup_p: float
    ratio: float
    unnormalized: float
    energy: float


def gradient_bound_scan(coeffs: Coefficients, domain: Domain, f: Payoff, xs: Sequence, ts: Sequence[float],
                        p: float, *, N: int, dt: float, v=None, seed: int = DEFAULT_SEED, bridge: bool = True,
                        threads: int = 1, r1: float | None = None) -> list[BoundRow]:
    """Ratios ``|grad P_t f(x)| sqrt(t) (rho ^ 1) / (P_t |f|^p (x))^{1/p}`` over an (x, t) table.

    One ensemble per start point, simulated to ``max(ts)``; every ``t`` must
    be a grid node.  ``v`` defaults to the inward normal at ``x``.
    """
    if not p >= 1:
        raise ValueError("p must be at least 1")
    ts = sorted(ts)
    grid = TimeGrid(ts[-1], dt)
    fp = lambda y: np.abs(f(y)) ** p
    rows = []
    for x in xs:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not domain.contains(x):
            raise ValueError(f"scan point {x.tolist()} is not interior")
        direction = v
        if direction is None:
            dist, normals = domain.faces(x)
            direction = normals[0, int(np.argmin(dist[0]))]
        direction = np.asarray(direction, dtype=float)
        rho = float(domain.distance_to_boundary(x))
        spec = EnsembleSpec(coeffs, domain, grid, N, x0=x, seed=seed, bridge=bridge, threads=threads)

        def per_chunk(paths: KilledPath):
            var = simulate_variation(paths, coeffs, direction)
            out = []
            for t in ts:
                kt = grid.node(t)
                alive = paths.alive[:, kt]
                out.append((bismut_terms(paths, var, coeffs, domain, f, t, r1),
                            _payoff_values(fp, paths.states[:, kt], alive)))
            return out

        chunks = spec.map(per_chunk)
        for i, t in enumerate(ts):
            terms = _stack_terms([c[i][0] for c in chunks])
            grad, grad_se = stable_mean_se(terms.gradient)
            pp = stable_mean(np.concatenate([c[i][1] for c in chunks]))
            norm = pp ** (1.0 / p) if pp > 0 else 0.0
            unnorm = abs(grad) * math.sqrt(t)
            ratio = unnorm * min(rho, 1.0) / norm if norm > 0 else math.inf
            rows.append(BoundRow(tuple(x.tolist()), t, rho, grad, grad_se, pp, ratio, unnorm,
                                 stable_mean(terms.energy)))
    return rows


# ---------------------------------------------------------------------------
# payoffs
# ---------------------------------------------------------------------------


def payoff(name: str, dim: int = 1, **params) -> Payoff:
    """Named payoffs: ``one``, ``indicator`` (``lo < x_axis < hi``), ``gaussian``, ``cosine``."""
    if name == "one":
        return lambda x: np.ones(len(x))
    if name == "zero":
        return lambda x: np.zeros(len(x))
    if name == "indicator":
        lo, hi = float(params.get("lo", 0.0)), float(params.get("hi", 2.0))
        axis = int(params.get("axis", 0))
        return lambda x: ((x[:, axis] > lo) & (x[:, axis] < hi)).astype(float)
    if name == "gaussian":
        c = np.asarray(params.get("center", np.zeros(dim)), dtype=float).reshape(dim)
        w = float(params.get("width", 0.5))
        return lambda x: np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w * w))
    if name == "cosine":
        k = np.asarray(params.get("wavevector", np.ones(dim)), dtype=float).reshape(dim)
        return lambda x: np.cos(x @ k)
    raise ValueError(f"unknown payoff {name!r}; choose from one, zero, indicator, gaussian, cosine")
