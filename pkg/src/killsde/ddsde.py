"""Killed distribution-dependent SDEs: fixed-point and particle solvers, Girsanov comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import Coefficients
from .domain import Domain
from .engine import EnsembleSpec, KilledPath, TimeGrid, _simulate_batch, stratified_initials
from .measures import SubProbMeasure, histogram_noise_floor, tv_distance, w1_truncated
from .rng import DEFAULT_SEED, draw_noise, stable_mean, stable_mean_se

LOG_R_LIMIT = 700.0


@dataclass
class MeasureFlow:
    """Measures at increasing node times; between nodes the left node applies."""

    times: np.ndarray
    measures: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.measures) or len(self.times) == 0:
            raise ValueError("a flow needs one measure per node time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("flow times must increase")

    def measure_at(self, t: float) -> SubProbMeasure:
        k = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
        return self.measures[max(k, 0)]

    def masses(self) -> np.ndarray:
        return np.array([m.mass for m in self.measures])

    @classmethod
    def constant(cls, mu: SubProbMeasure, grid: TimeGrid) -> "MeasureFlow":
        return cls(grid.times, [mu] * (grid.steps + 1))


def flow_from_paths(paths: KilledPath, total: int) -> MeasureFlow:
    n_nodes = paths.states.shape[1]
    return MeasureFlow(paths.grid.times,
                       [SubProbMeasure.empirical(paths.states[:, k], paths.alive[:, k], total) for k in range(n_nodes)])


def flow_distance(a: MeasureFlow, b: MeasureFlow, lam: float, bin_width: float) -> float:
    """``sup_t exp(-lam t) ||a_t - b_t||_var`` over the node times of ``a``."""
    return max(math.exp(-lam * t) * tv_distance(a.measure_at(t), b.measure_at(t), bin_width) for t in a.times)


def _flow_chunks(spec: EnsembleSpec) -> MeasureFlow:
    parts = spec.map(lambda p: (p.states, p.alive))
    states = np.concatenate([s for s, _ in parts])
    alive = np.concatenate([a for _, a in parts])
    return MeasureFlow(spec.grid.times,
                       [SubProbMeasure.empirical(states[:, k], alive[:, k], spec.N) for k in range(states.shape[1])])


def frozen_flow_map(flow: MeasureFlow, initial: SubProbMeasure, coeffs: Coefficients, domain: Domain,
                    grid: TimeGrid, N: int, *, seed: int = DEFAULT_SEED, bridge: bool = True,
                    threads: int = 1) -> MeasureFlow:
    """One application of the map: simulate with the drift frozen along ``flow`` and return the law flow."""
    if N < 1:
        raise ValueError("N must be positive")
    spec = EnsembleSpec(coeffs, domain, grid, N, initial=initial, seed=seed, bridge=bridge,
                        frozen_flow=flow, threads=threads)
    return _flow_chunks(spec)


def design_lambda(coeffs: Coefficients, points=None) -> float:
    """Smallest ``lam`` with ``c0 psi^2 / (2 lam) <= 1/4``, i.e. ``lam = 2 c0 psi^2``.

    ``c0 = sup ||sigma^T a^{-1}||^2`` and ``psi`` is the preset's declared
    TV-Lipschitz constant of the drift.
    """
    if coeffs.tv_lipschitz is None:
        raise ValueError(f"preset {coeffs.name!r} declares no TV-Lipschitz constant; pass lambda explicitly")
    c0 = coeffs.sup_noise_weight(0.0, points) ** 2
    return max(2.0 * c0 * coeffs.tv_lipschitz**2, 1e-12)


@dataclass
class PicardResult:
    flow: MeasureFlow
    trace: list[float]
    converged: bool
    lam: float

    @property
    def ratios(self) -> list[float]:
        return [b / a if a > 0 else 0.0 for a, b in zip(self.trace, self.trace[1:])]


def picard_solve(initial: SubProbMeasure, coeffs: Coefficients, domain: Domain, grid: TimeGrid, N: int, *,
                 lam: float | None = None, tol: float = 1e-3, max_iter: int = 10, bin_width: float = 0.05,
                 seed: int = DEFAULT_SEED, bridge: bool = True, threads: int = 1) -> PicardResult:
    """Iterate the frozen-flow map from the initial measure frozen in time.

    Every iteration reuses the same streams, so successive iterates differ
    only through the measure argument.  Stops when the weighted distance
    between iterates drops below ``tol``; otherwise ``converged`` is false
    and the trace shows what happened.
    """
    if lam is None:
        lam = design_lambda(coeffs)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    flow = MeasureFlow.constant(initial, grid)
    trace = []
    for _ in range(max_iter):
        new = frozen_flow_map(flow, initial, coeffs, domain, grid, N, seed=seed, bridge=bridge, threads=threads)
        trace.append(flow_distance(new, flow, lam, bin_width))
        flow = new
        if trace[-1] < tol:
            return PicardResult(flow, trace, True, lam)
    return PicardResult(flow, trace, False, lam)


def interacting_particles(initial: SubProbMeasure, coeffs: Coefficients, domain: Domain, grid: TimeGrid, N: int,
                          *, seed: int = DEFAULT_SEED, bridge: bool = True) -> MeasureFlow:
    """``N`` particles whose drift at each step sees the current empirical sub-probability measure."""
    if N < 2:
        raise ValueError("the particle system needs N >= 2")
    idx = np.arange(N)
    x, alive0 = stratified_initials(initial, domain, idx, N)
    normals, uniforms = draw_noise(seed, idx, grid.steps, coeffs.noise_dim)
    stat_fn = None
    if coeffs.measure_dependent:
        stat_fn = lambda k, xs, live: coeffs.measure_statistic(SubProbMeasure.empirical(xs, live, N))
    paths = _simulate_batch(x, alive0, coeffs, domain, grid, normals, uniforms, bridge, stat_fn, idx)
    return flow_from_paths(paths, N)


# ---------------------------------------------------------------------------
# Girsanov comparison
# ---------------------------------------------------------------------------


def weighted_tv(atoms_a, w_a, defect_a, atoms_b, w_b, defect_b, bin_width: float) -> float:
    """TV between weighted clouds that need not be sub-probabilities (reweighted samples)."""
    a = _binned_raw(atoms_a, w_a, bin_width)
    b = _binned_raw(atoms_b, w_b, bin_width)
    terms = [abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in sorted(set(a) | set(b))]
    terms.append(abs(defect_a - defect_b))
    return math.fsum(terms)


def _binned_raw(atoms, weights, width):
    atoms = np.atleast_2d(atoms)
    if len(weights) == 0:
        return {}
    keys = np.floor(atoms / width).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inv.reshape(-1), weights)
    return {tuple(k): s for k, s in zip(uniq.tolist(), sums)}


@dataclass
class GirsanovReport:
    log_r: np.ndarray
    mean_r: float
    mean_r_se: float
    entropy: float
    entropy_se: float
    pinsker: float
    tv: float
    tolerance: float
    params: dict = field(default_factory=dict)

    @property
    def pinsker_holds(self) -> bool:
        return self.tv <= self.pinsker + self.tolerance


def girsanov_compare(flow_mu: MeasureFlow, flow_nu: MeasureFlow, initial: SubProbMeasure, coeffs: Coefficients,
                     domain: Domain, grid: TimeGrid, N: int, *, seed: int = DEFAULT_SEED,
                     seed_direct: int | None = None, bin_width: float = 0.1, bridge: bool = True,
                     threads: int = 1) -> GirsanovReport:
    """Reweight paths of the ``flow_mu`` dynamics into the ``flow_nu`` law at the horizon.

    ``log R = sum_k 1{alive} (<xi_k, dW_k> - |xi_k|^2 dt / 2)`` with
    ``xi = sigma^T a^{-1} (b^nu - b^mu)``, stopped at the killing time.  The
    direct ``flow_nu`` ensemble uses an independent seed; the tolerance is
    the histogram noise floor of the two clouds plus three standard errors
    of the Pinsker bound.
    """
    if not coeffs.measure_dependent:
        raise ValueError("both flows act through the measure argument; the preset ignores it")
    seed_direct = seed + 1 if seed_direct is None else seed_direct
    dt = grid.dt
    stats_mu = [coeffs.measure_statistic(flow_mu.measure_at(k * dt)) for k in range(grid.steps)]
    stats_nu = [coeffs.measure_statistic(flow_nu.measure_at(k * dt)) for k in range(grid.steps)]
    spec = EnsembleSpec(coeffs, domain, grid, N, initial=initial, seed=seed, bridge=bridge,
                        frozen_flow=flow_mu, threads=threads)

    def per_chunk(paths: KilledPath):
        log_r = np.zeros(paths.n)
        for k in range(grid.steps):
            live = paths.alive[:, k]
            if not np.any(live):
                continue
            xs = paths.states[live, k]
            t = k * dt
            diff = coeffs.drift_given(t, xs, stats_nu[k]) - coeffs.drift_given(t, xs, stats_mu[k])
            xi = coeffs.noise_weight(t, xs, diff)
            log_r[live] += np.einsum("nm,nm->n", xi, paths.dW[live, k]) - 0.5 * np.sum(xi * xi, axis=1) * dt
        if np.any(np.abs(log_r) > LOG_R_LIMIT):
            raise FloatingPointError(f"|log R| exceeded {LOG_R_LIMIT}: relative entropy overflow")
        return log_r, paths.states[:, -1], paths.alive[:, -1]

    parts = spec.map(per_chunk)
    log_r = np.concatenate([p[0] for p in parts])
    xT = np.concatenate([p[1] for p in parts])
    aliveT = np.concatenate([p[2] for p in parts])
    R = np.exp(log_r)
    mean_r, mean_r_se = stable_mean_se(R)
    entropy, entropy_se = stable_mean_se(R * log_r)
    pinsker = math.sqrt(2 * max(entropy, 0.0))
    pinsker_se = entropy_se / pinsker if pinsker > 0 else math.sqrt(2 * entropy_se)

    direct = _flow_chunks(EnsembleSpec(coeffs, domain, grid, N, initial=initial, seed=seed_direct, bridge=bridge,
                                       frozen_flow=flow_nu, threads=threads)).measures[-1]
    w = R / N
    tv = weighted_tv(xT[aliveT], w[aliveT], float(np.sum(w[~aliveT])),
                     direct.atoms, direct.weights, direct.defect, bin_width)
    floor = histogram_noise_floor(direct, bin_width, N) * max(1.0, math.sqrt(stable_mean(R * R)))
    tol = floor + 3 * pinsker_se
    return GirsanovReport(log_r, mean_r, mean_r_se, entropy, entropy_se, pinsker, tv, tol,
                          {"N": N, "seed": seed, "seed_direct": seed_direct, "bin_width": bin_width})


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


@dataclass
class StabilityRow:
    t: float
    tv: float
    noise_floor: float
    w1: float
    w1_rho: float
    ratio_R: float
    ratio_G: float
    ratio_var: float


def stability_experiment(mu0: SubProbMeasure, nu0: SubProbMeasure, coeffs: Coefficients, domain: Domain,
                         grid: TimeGrid, ts: Sequence[float], N: int, *, seed: int = DEFAULT_SEED,
                         seed_nu: int | None = None, bin_width: float = 0.05, method: str = "particles",
                         bridge: bool = True, lam: float | None = None, max_iter: int = 8) -> list[StabilityRow]:
    """Distances between the killed laws started from ``mu0`` and ``nu0`` along ``ts``.

    The two solutions are simulated with independent streams.  Raises when
    the truncated Wasserstein distance of the initials vanishes while the
    laws are separated beyond the noise floor.
    """
    seed_nu = seed + 7919 if seed_nu is None else seed_nu
    flows = []
    for init, s in ((mu0, seed), (nu0, seed_nu)):
        if method == "particles":
            flows.append(interacting_particles(init, coeffs, domain, grid, N, seed=s, bridge=bridge))
        elif method == "picard":
            lam_used = lam if lam is not None else (design_lambda(coeffs) if coeffs.tv_lipschitz else 1.0)
            flows.append(picard_solve(init, coeffs, domain, grid, N, lam=lam_used, seed=s, bridge=bridge,
                                      bin_width=bin_width, max_iter=max_iter, tol=1.0 / N).flow)
        else:
            raise ValueError(f"unknown method {method!r}; use 'particles' or 'picard'")
    w1 = w1_truncated(mu0, nu0, domain, "euclidean")
    w1_rho = w1_truncated(mu0, nu0, domain, "intrinsic")
    tv0 = tv_distance(mu0, nu0, bin_width)
    rows = []
    for t in ts:
        a, b = flows[0].measure_at(t), flows[1].measure_at(t)
        tv = tv_distance(a, b, bin_width)
        floor = max(histogram_noise_floor(a, bin_width, N), histogram_noise_floor(b, bin_width, N))
        if w1 == 0 and tv > floor:
            raise RuntimeError(f"inconsistent: W1 of the initials is 0 but TV at t={t} is {tv:.4g} > noise floor")
        rows.append(StabilityRow(t, tv, floor, w1, w1_rho,
                                 tv * math.sqrt(t) / w1 if w1 > 0 else math.nan,
                                 tv * math.sqrt(t) / w1_rho if w1_rho > 0 else math.nan,
                                 tv / tv0 if tv0 > 0 else math.nan))
    return rows
