"""Euler-Maruyama simulation of killed paths and of the variation process.

Paths are simulated in batches: every array carries a leading path axis.
Killing is detected by a containment test at the nodes and, optionally, by a
Brownian-bridge crossing draw between nodes.  After the killing time the
state is frozen at the crossing point projected onto the boundary.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .coefficients import Coefficients
from .domain import Domain
from .rng import DEFAULT_SEED, RngStreamSpec, draw_noise

CHUNK_SIZE = 8192
StatFn = Callable[[int, np.ndarray, np.ndarray], Any]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("horizon and dt must be positive")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError(f"horizon {self.horizon} is not an integer multiple of dt {self.dt}")

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def node(self, t: float) -> int:
        """Index of the node equal to ``t``; raises when ``t`` is not a node."""
        k = round(t / self.dt)
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a node of the grid (dt = {self.dt}, horizon = {self.horizon})")
        return k


@dataclass
class KilledPath:
    """A batch of killed paths on one grid.

    ``states`` ``(n, K+1, d)``; ``dW`` ``(n, K, m)``; ``alive`` ``(n, K+1)``
    with ``alive[:, k]`` true iff ``t_k < tau``; ``tau`` ``(n,)`` with
    ``inf`` meaning no killing up to the horizon.  ``stats`` holds the
    measure statistic fed to the drift at each step (``None`` entries for
    measure-free runs), needed to replay the Jacobians.
    """

    grid: TimeGrid
    states: np.ndarray
    dW: np.ndarray
    alive: np.ndarray
    tau: np.ndarray
    indices: np.ndarray
    stats: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def killed(self) -> np.ndarray:
        return np.isfinite(self.tau)

    def survivors(self, k: int | None = None) -> np.ndarray:
        return self.alive[:, self.grid.steps if k is None else k]

    def take(self, rows) -> "KilledPath":
        rows = np.atleast_1d(rows)
        return KilledPath(self.grid, self.states[rows], self.dW[rows], self.alive[rows], self.tau[rows],
                          self.indices[rows], self.stats)


@dataclass
class VariationPath:
    v: np.ndarray  # (n, K+1, d)

    @property
    def v0(self) -> np.ndarray:
        return self.v[:, 0]


def _initial_batch(x0, domain: Domain, n: int) -> tuple[np.ndarray, np.ndarray]:
    x0 = np.asarray(x0, dtype=float)
    x = np.broadcast_to(x0.reshape(1, domain.dim), (n, domain.dim)).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 has non-finite coordinates")
    if not np.all(domain.in_closure(x)):
        raise ValueError("x0 lies outside the closed domain")
    return x, domain.contains(x)


def stratified_initials(initial, domain: Domain, indices: np.ndarray, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic assignment of path ``i`` to the atom at quantile ``(i + 1/2)/total``.

    Quantiles beyond the total mass fall on the killed part: the path starts
    dead at a boundary point.
    """
    atoms = np.atleast_2d(np.asarray(initial.atoms, dtype=float))
    cum = np.cumsum(np.asarray(initial.weights, dtype=float))
    u = (np.asarray(indices, dtype=float) + 0.5) / total
    pos = np.searchsorted(cum, u, side="right")
    alive = pos < len(cum)
    x = np.empty((len(indices), domain.dim))
    x[alive] = atoms[pos[alive]]
    x[~alive] = domain.boundary_point()
    return x, alive & domain.contains(x)


def _simulate_batch(
    x0: np.ndarray,
    alive0: np.ndarray,
    coeffs: Coefficients,
    domain: Domain,
    grid: TimeGrid,
    normals: np.ndarray,
    uniforms: np.ndarray,
    bridge: bool,
    stat_for_step: StatFn | None,
    indices: np.ndarray,
) -> KilledPath:
    n, d = x0.shape
    K, dt = grid.steps, grid.dt
    sqdt = math.sqrt(dt)
    # time-major storage keeps the per-step slices contiguous
    states = np.empty((K + 1, n, d))
    alive = np.zeros((K + 1, n), dtype=bool)
    dW = np.ascontiguousarray(normals.transpose(1, 0, 2)) * sqdt
    unif = np.ascontiguousarray(uniforms.T)
    tau = np.full(n, np.inf)
    tau[~alive0] = 0.0
    x = x0.copy()
    if np.any(~alive0):
        x[~alive0] = domain.project_to_boundary(x[~alive0])
    states[0] = x
    alive[0] = alive0
    live = alive0.copy()
    stats = []
    const_sigma = coeffs.sigma
    for k in range(K):
        t = k * dt
        stat = stat_for_step(k, x, live) if stat_for_step is not None else None
        stats.append(stat)
        idx = np.flatnonzero(live)
        full = idx.size == n
        if idx.size:
            xa = x if full else x[idx]
            dwk = dW[k] if full else dW[k, idx]
            drift = coeffs.drift_given(t, xa, stat)
            if const_sigma is not None:
                noise = dwk @ const_sigma.T
            else:
                noise = np.einsum("ndm,nm->nd", coeffs.diffusion(t, xa), dwk)
            xn = xa + drift * dt + noise
            if not np.all(np.isfinite(xn)):
                bad = idx[~np.all(np.isfinite(xn), axis=1)][0]
                raise FloatingPointError(f"non-finite state at step {k} (t = {t:.6g}) for path {indices[bad]}")
            sd_old = domain._signed(xa)
            sd_new = domain._signed(xn)
            exited = sd_new <= 0
            theta = np.ones(idx.size)
            if np.any(exited):
                theta[exited] = sd_old[exited] / (sd_old[exited] - sd_new[exited])
            if bridge:
                stay = np.flatnonzero(~exited)
                if stay.size:
                    d1, normals_f = domain._faces(xa[stay])
                    d2, _ = domain._faces(xn[stay])
                    var = coeffs.normal_variance(t, xa[stay], normals_f)
                    d1 = np.maximum(d1, 0.0)
                    d2 = np.maximum(d2, 0.0)
                    # no variance along a normal: the bridge cannot cross that face
                    with np.errstate(divide="ignore", invalid="ignore"):
                        p_face = np.where(var > 0, np.exp(-2.0 * d1 * d2 / (var * dt)), 0.0)
                    p_cross = 1.0 - np.prod(1.0 - p_face, axis=1)
                    uk = unif[k] if full else unif[k, idx]
                    hit = uk[stay] < p_cross
                    if np.any(hit):
                        rows = stay[hit]
                        f = np.argmax(p_face[hit], axis=1)
                        a1 = np.take_along_axis(d1[hit], f[:, None], 1)[:, 0]
                        a2 = np.take_along_axis(d2[hit], f[:, None], 1)[:, 0]
                        theta[rows] = np.where(a1 + a2 > 0, a1 / np.maximum(a1 + a2, 1e-300), 0.0)
                        exited[rows] = True
            if np.any(exited):
                rows = np.flatnonzero(exited)
                cross = xa[rows] + theta[rows, None] * (xn[rows] - xa[rows])
                xn[rows] = domain._project(cross)
                killed_idx = idx[rows]
                tau[killed_idx] = t + theta[rows] * dt
                live[killed_idx] = False
            if full:
                x = xn
            else:
                x[idx] = xn
        states[k + 1] = x
        alive[k + 1] = live
    states = states.transpose(1, 0, 2)
    alive = alive.T
    dW = dW.transpose(1, 0, 2)
    return KilledPath(grid, states, dW, alive, tau, np.asarray(indices), stats)


def simulate_killed(
    x0,
    coeffs: Coefficients,
    domain: Domain,
    grid: TimeGrid,
    rng: RngStreamSpec,
    bridge: bool = True,
    frozen_flow=None,
) -> KilledPath:
    """One killed path driven by the stream ``rng`` (a batch of size one)."""
    _check_dims(coeffs, domain)
    x, alive0 = _initial_batch(x0, domain, 1)
    normals, uniforms = draw_noise(rng.seed, [rng.index], grid.steps, coeffs.noise_dim)
    stat_fn = _flow_stats(coeffs, grid, frozen_flow)
    return _simulate_batch(x, alive0, coeffs, domain, grid, normals, uniforms, bridge, stat_fn,
                           np.array([rng.index]))


def _check_dims(coeffs: Coefficients, domain: Domain) -> None:
    if coeffs.dim != domain.dim:
        raise ValueError(f"coefficient dimension {coeffs.dim} does not match domain dimension {domain.dim}")


def _flow_stats(coeffs: Coefficients, grid: TimeGrid, flow) -> StatFn | None:
    if flow is None or not coeffs.measure_dependent:
        return None
    stats = [coeffs.measure_statistic(flow.measure_at(k * grid.dt)) for k in range(grid.steps)]
    return lambda k, x, live: stats[k]


def simulate_variation(path: KilledPath, coeffs: Coefficients, v0) -> VariationPath:
    """Euler scheme for the derivative process along stored paths, frozen after death."""
    n, K1, d = path.states.shape
    if coeffs.dim != d:
        raise ValueError(f"path dimension {d} does not match coefficient dimension {coeffs.dim}")
    if path.dW.shape[2] != coeffs.noise_dim:
        raise ValueError("noise dimension of the path does not match the coefficients")
    v0 = np.asarray(v0, dtype=float)
    v = np.empty((n, K1, d))
    v[:, 0] = np.broadcast_to(v0.reshape(-1, d), (n, d))
    dt = path.grid.dt
    for k in range(K1 - 1):
        t = k * dt
        cur = v[:, k]
        live = path.alive[:, k]
        v[:, k + 1] = cur
        idx = np.flatnonzero(live)
        if not idx.size:
            continue
        xs = path.states[idx, k]
        stat = path.stats[k] if path.stats else None
        jb = coeffs.drift_jacobian(t, xs, stat)
        step = np.einsum("nij,nj->ni", jb, cur[idx]) * dt
        js = coeffs.diffusion_jacobian(t, xs)
        if js is not None:
            step = step + np.einsum("nimj,nj,nm->ni", js, cur[idx], path.dW[idx, k])
        v[idx, k + 1] = cur[idx] + step
    return VariationPath(v)


def _chunks(n: int, chunk: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def ensemble_map(fn: Callable[[np.ndarray], Any], n: int, threads: int = 1, chunk: int = CHUNK_SIZE) -> list:
    """Apply ``fn`` to consecutive index chunks of fixed size; results in chunk order.

    The chunking does not depend on ``threads``, so outputs are identical for
    any worker count.
    """
    parts = _chunks(n, chunk)
    if threads <= 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))


@dataclass
class EnsembleSpec:
    """Everything needed to (re)simulate the paths with indices ``0..N-1``."""

    coeffs: Coefficients
    domain: Domain
    grid: TimeGrid
    N: int
    x0: Any = None
    initial: Any = None
    seed: int = DEFAULT_SEED
    bridge: bool = True
    frozen_flow: Any = None
    threads: int = 1
    chunk: int = CHUNK_SIZE

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("ensemble size N must be at least 1")
        if (self.x0 is None) == (self.initial is None):
            raise ValueError("give exactly one of a start point x0 or an initial measure")
        _check_dims(self.coeffs, self.domain)
        self._stat_fn = _flow_stats(self.coeffs, self.grid, self.frozen_flow)

    def simulate_chunk(self, indices: np.ndarray) -> KilledPath:
        if self.x0 is not None:
            x, alive0 = _initial_batch(self.x0, self.domain, len(indices))
        else:
            x, alive0 = stratified_initials(self.initial, self.domain, indices, self.N)
        normals, uniforms = draw_noise(self.seed, indices, self.grid.steps, self.coeffs.noise_dim)
        return _simulate_batch(x, alive0, self.coeffs, self.domain, self.grid, normals, uniforms,
                               self.bridge, self._stat_fn, indices)

    def map(self, fn: Callable[[KilledPath], Any]) -> list:
        """Simulate chunk by chunk and reduce each chunk with ``fn`` (paths are not retained)."""
        return ensemble_map(lambda idx: fn(self.simulate_chunk(idx)), self.N, self.threads, self.chunk)


def concat_paths(parts: Sequence[KilledPath]) -> KilledPath:
    first = parts[0]
    return KilledPath(first.grid,
                      np.concatenate([p.states for p in parts]),
                      np.concatenate([p.dW for p in parts]),
                      np.concatenate([p.alive for p in parts]),
                      np.concatenate([p.tau for p in parts]),
                      np.concatenate([p.indices for p in parts]),
                      first.stats)


def simulate_ensemble(
    coeffs: Coefficients,
    domain: Domain,
    grid: TimeGrid,
    N: int,
    *,
    x0=None,
    initial=None,
    seed: int = DEFAULT_SEED,
    bridge: bool = True,
    frozen_flow=None,
    threads: int = 1,
    v0=None,
    chunk: int = CHUNK_SIZE,
) -> KilledPath | tuple[KilledPath, VariationPath]:
    """``N`` paths from streams ``(seed, 0..N-1)``, kept in memory.

    With ``v0`` the variation process is returned as well.  For large ``N``
    prefer :meth:`EnsembleSpec.map`, which reduces chunk by chunk.
    """
    spec = EnsembleSpec(coeffs, domain, grid, N, x0=x0, initial=initial, seed=seed, bridge=bridge,
                        frozen_flow=frozen_flow, threads=threads, chunk=chunk)
    paths = concat_paths(spec.map(lambda p: p))
    if v0 is None:
        return paths
    return paths, simulate_variation(paths, coeffs, v0)
