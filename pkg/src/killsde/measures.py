"""Sub-probability measures on a domain and distances between them.

A measure is a weighted cloud of atoms inside the domain; the missing mass
``1 - mass`` is the killed part, represented in transport problems by a
cemetery node standing for the boundary.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .domain import Ball, Domain, HalfSpace, Slab
from .rng import path_generator

log = logging.getLogger(__name__)

MASS_TOL = 1e-12
LP_BUDGET = 2000
INTRINSIC_BUDGET_ND = 200
EXACT_LP_LIMIT = 40_000  # largest support product solved by the exact LP


@dataclass(frozen=True)
class SubProbMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.ndim == 1:
            atoms = atoms.reshape(len(weights), -1) if len(weights) else atoms.reshape(0, 1)
        if atoms.shape[0] != weights.shape[0]:
            raise ValueError("atoms and weights have different lengths")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        if math.fsum(weights.tolist()) > 1 + MASS_TOL:
            raise ValueError(f"total mass {math.fsum(weights.tolist())} exceeds 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def mass(self) -> float:
        return math.fsum(self.weights.tolist())

    @property
    def defect(self) -> float:
        return max(0.0, 1.0 - self.mass)

    def __len__(self) -> int:
        return len(self.weights)

    def check_in(self, domain: Domain) -> "SubProbMeasure":
        if len(self) and not np.all(domain.contains(self.atoms)):
            raise ValueError("every atom must lie strictly inside the domain")
        return self

    def scaled(self, factor: float) -> "SubProbMeasure":
        return SubProbMeasure(self.atoms, self.weights * factor)

    @classmethod
    def dirac(cls, x, mass: float = 1.0) -> "SubProbMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.reshape(1, -1), np.array([mass]))

    @classmethod
    def empirical(cls, points, alive, total: int) -> "SubProbMeasure":
        """Alive points with weight ``1/total`` each."""
        points = np.atleast_2d(points)
        alive = np.asarray(alive, dtype=bool)
        return cls(points[alive], np.full(int(alive.sum()), 1.0 / total))

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["weight"])
            for a, wt in zip(self.atoms, self.weights):
                w.writerow([f"{v:.17g}" for v in a] + [f"{wt:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "SubProbMeasure":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty cloud file")
        header = rows[0]
        if header[-1] != "weight" or any(h != f"x{i + 1}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: header must be x1..xd,weight")
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
        return cls(data[:, :-1], data[:, -1])


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------


def _binned(mu: SubProbMeasure, width: float, origin: float) -> dict:
    if not len(mu):
        return {}
    keys = np.floor((mu.atoms - origin) / width).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inv.reshape(-1), mu.weights)
    return {tuple(k): s for k, s in zip(uniq.tolist(), sums)}


def tv_distance(mu: SubProbMeasure, nu: SubProbMeasure, bin_width: float, origin: float = 0.0) -> float:
    """``sup_{|f| <= 1} |mu(f) - nu(f)|`` over bin-constant ``f`` plus the killed part.

    Both clouds are histogrammed on the grid ``origin + bin_width * Z^d`` and
    the defects form one extra bin; the result lies in ``[0, 2]``.
    """
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    if len(mu) and len(nu) and mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    a, b = _binned(mu, bin_width, origin), _binned(nu, bin_width, origin)
    terms = [abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in sorted(set(a) | set(b))]
    terms.append(abs(mu.defect - nu.defect))
    return math.fsum(terms)


def tv_report(mu: SubProbMeasure, nu: SubProbMeasure, bin_width: float, origin: float = 0.0) -> dict:
    """TV at ``bin_width`` and ``bin_width / 2``; flags a relative spread above 10%."""
    coarse = tv_distance(mu, nu, bin_width, origin)
    fine = tv_distance(mu, nu, bin_width / 2, origin)
    spread = abs(fine - coarse) / max(coarse, fine) if max(coarse, fine) > 0 else 0.0
    return {"tv": coarse, "tv_fine": fine, "bin_width": bin_width, "bin_width_fine": bin_width / 2,
            "relative_spread": spread, "unstable": spread > 0.10}


def histogram_noise_floor(mu: SubProbMeasure, bin_width: float, n_paths: int, origin: float = 0.0,
                          sigmas: float = 3.0) -> float:
    """Expected TV between two independent ``n_paths``-samples of the law behind ``mu``, plus ``sigmas`` spreads.

    Per bin ``|p_hat - p_hat'|`` has mean ``sqrt(2/pi) sqrt(2 p (1-p) / n)``;
    the spread term uses the same per-bin standard deviations added in
    quadrature.
    """
    probs = list(_binned(mu, bin_width, origin).values()) + [mu.defect]
    probs = np.clip(np.asarray(probs), 0.0, 1.0)
    sd = np.sqrt(2 * probs * (1 - probs) / n_paths)
    mean = math.sqrt(2 / math.pi) * float(np.sum(sd))
    spread = math.sqrt(1 - 2 / math.pi) * float(np.sqrt(np.sum(sd**2)))
    return mean + sigmas * spread


# ---------------------------------------------------------------------------
# truncated Wasserstein distance
# ---------------------------------------------------------------------------


def _merge_atoms(mu: SubProbMeasure) -> SubProbMeasure:
    """Combine coincident atoms (exact; shrinks clouds started from a Dirac mass)."""
    if len(mu) < 2:
        return mu
    atoms, inverse = np.unique(mu.atoms, axis=0, return_inverse=True)
    if len(atoms) == len(mu):
        return mu
    return SubProbMeasure(atoms, np.bincount(inverse.reshape(-1), weights=mu.weights, minlength=len(atoms)))


def _units(mu: SubProbMeasure, budget: int) -> np.ndarray:
    """Stratified resampling of ``mu`` to ``round(mass * budget)`` atoms, each worth ``1 / budget``."""
    k = int(round(mu.mass * budget))
    if k == 0:
        return np.empty((0, mu.dim))
    cum = np.cumsum(mu.weights) / mu.mass
    u = (np.arange(k) + 0.5) / k
    return mu.atoms[np.minimum(np.searchsorted(cum, u, side="right"), len(mu) - 1)]


def _quantized_w1(mu: SubProbMeasure, nu: SubProbMeasure, domain: Domain, metric: str, budget: int) -> float:
    """Both sides as ``budget`` unit masses (surplus units at the cemetery), solved as an assignment."""
    log.info("quantizing clouds of %d and %d atoms to %d units for the transport problem", len(mu), len(nu), budget)
    x, y = _units(mu, budget), _units(nu, budget)
    ones_x, ones_y = np.full(len(x), 1.0 / budget), np.full(len(y), 1.0 / budget)
    cost = cost_matrix(SubProbMeasure(x, ones_x), SubProbMeasure(y, ones_y), domain, metric)
    rows = np.concatenate([np.arange(len(x)), np.full(budget - len(x), len(x))])
    cols = np.concatenate([np.arange(len(y)), np.full(budget - len(y), len(y))])
    full = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(full)
    return math.fsum(full[r, c].tolist()) / budget


def _interval_of(domain: Domain) -> tuple[float, float]:
    """Endpoints of a one-dimensional domain (possibly infinite)."""
    if isinstance(domain, Ball):
        return domain.center[0] - domain.radius, domain.center[0] + domain.radius
    n = domain.normal[0]
    if isinstance(domain, HalfSpace):
        return (domain.offset, math.inf) if n > 0 else (-math.inf, -domain.offset)
    if isinstance(domain, Slab):
        return (domain.a, domain.b) if n > 0 else (-domain.b, -domain.a)
    raise TypeError(f"no one-dimensional interval for {type(domain).__name__}")


def _log_or_linear(u: np.ndarray) -> np.ndarray:
    """Antiderivative of ``1 / (u ^ 1)`` vanishing at ``u = 1``."""
    return np.where(u <= 1.0, np.log(np.maximum(u, 1e-300)), u - 1.0)


def _potential_1d(domain: Domain, xs: np.ndarray) -> np.ndarray:
    """``Phi`` with ``rho(x, y) = |Phi(x) - Phi(y)|`` in one dimension (closed form)."""
    lo, hi = _interval_of(domain)
    xs = np.asarray(xs, dtype=float)
    if math.isinf(hi):
        return _log_or_linear(xs - lo)
    if math.isinf(lo):
        return -_log_or_linear(hi - xs)
    mid = 0.5 * (lo + hi)
    left = _log_or_linear(np.minimum(xs, mid) - lo)
    right = 2 * _log_or_linear(np.array(mid - lo)) - _log_or_linear(hi - np.maximum(xs, mid))
    return np.where(xs <= mid, left, right)


def cost_matrix(mu: SubProbMeasure, nu: SubProbMeasure, domain: Domain, metric: str = "euclidean") -> np.ndarray:
    """Costs over ``(atoms of mu + cemetery) x (atoms of nu + cemetery)``."""
    x, y = mu.atoms, nu.atoms
    n, m = len(x), len(y)
    c = np.zeros((n + 1, m + 1))
    if metric == "euclidean":
        if n and m:
            c[:n, :m] = np.minimum(np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2), 1.0)
        if n:
            c[:n, m] = np.minimum(domain.distance_to_boundary(x), 1.0)
        if m:
            c[n, :m] = np.minimum(domain.distance_to_boundary(y), 1.0)
    elif metric == "intrinsic":
        if n and m:
            if domain.dim == 1:
                phi = _potential_1d(domain, np.concatenate([x[:, 0], y[:, 0]]))
                c[:n, :m] = np.minimum(np.abs(phi[:n, None] - phi[None, n:]), 1.0)
            else:
                for i in range(n):
                    for j in range(m):
                        c[i, j] = min(domain.intrinsic_distance(x[i], y[j]), 1.0)
        c[:n, m] = 1.0
        c[n, :m] = 1.0
    else:
        raise ValueError(f"unknown metric {metric!r}; use 'euclidean' or 'intrinsic'")
    return c


def _transport_lp(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray, method: str = "highs-ds"):
    n, m = cost.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    b = np.concatenate([supply, demand])
    res = linprog(cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method=method)
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return res.fun, res.x.reshape(n, m)


def coupling_plan(mu: SubProbMeasure, nu: SubProbMeasure, domain: Domain, metric: str = "euclidean"
                  ) -> tuple[float, np.ndarray]:
    """Optimal cost and plan; the last row and column belong to the cemetery."""
    cost = cost_matrix(mu, nu, domain, metric)
    supply = np.append(mu.weights, mu.defect)
    demand = np.append(nu.weights, nu.defect)
    # rebalance rounding so both sides carry exactly the same total
    demand[-1] += math.fsum(supply.tolist()) - math.fsum(demand.tolist())
    demand[-1] = max(demand[-1], 0.0)
    return _transport_lp(cost, supply, demand)


def w1_truncated(mu: SubProbMeasure, nu: SubProbMeasure, domain: Domain, metric: str = "euclidean",
                 budget: int | None = None) -> float:
    """Truncated 1-Wasserstein distance between sub-probability measures.

    Exact LP when the supports are small (after merging coincident atoms);
    larger clouds are quantized to ``budget`` unit masses and solved as an
    assignment problem, which is exact for the quantized measures.
    """
    mu, nu = _merge_atoms(mu), _merge_atoms(nu)
    if not len(mu) and not len(nu):
        return 0.0
    if len(mu) * len(nu) <= EXACT_LP_LIMIT:
        value, _ = coupling_plan(mu, nu, domain, metric)
    else:
        if budget is None:
            budget = LP_BUDGET if (metric == "euclidean" or domain.dim == 1) else INTRINSIC_BUDGET_ND
        value = _quantized_w1(mu, nu, domain, metric, budget)
    return float(min(max(value, 0.0), 1.0))


def w1_oracle(mu: SubProbMeasure, nu: SubProbMeasure, domain: Domain, metric: str = "euclidean") -> float:
    """Independent LP with explicit boundary points instead of a cemetery.

    Boundary candidates are the nearest boundary points of all atoms plus a
    fixed reference point; the boundary marginals are free.  Solved with an
    interior-point method.
    """
    x, y = mu.atoms, nu.atoms
    bpts = [domain.boundary_point()]
    if len(x):
        bpts.append(domain.project_to_boundary(x).reshape(len(x), -1))
    if len(y):
        bpts.append(domain.project_to_boundary(y).reshape(len(y), -1))
    B = np.unique(np.vstack([np.atleast_2d(b) for b in bpts]), axis=0)
    left = np.vstack([x.reshape(-1, domain.dim), B])
    right = np.vstack([y.reshape(-1, domain.dim), B])
    n, m, nb = len(x), len(y), len(B)
    L, R = n + nb, m + nb
    cost = np.ones((L, R))
    if metric == "euclidean":
        cost = np.minimum(np.linalg.norm(left[:, None] - right[None], axis=2), 1.0)
    elif metric == "intrinsic":
        for i in range(L):
            for j in range(R):
                if i >= n and j >= m:
                    cost[i, j] = 0.0 if np.array_equal(left[i], right[j]) else 1.0
                elif i < n and j < m:
                    cost[i, j] = min(domain.intrinsic_distance(left[i], right[j], quadrature_steps=400), 1.0)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    # equality rows for the interior atoms and one total-mass row; boundary marginals are free
    A = []
    for i in range(n):
        row = np.zeros((L, R))
        row[i] = 1.0
        A.append(row.ravel())
    for j in range(m):
        row = np.zeros((L, R))
        row[:, j] = 1.0
        A.append(row.ravel())
    A.append(np.ones(L * R))
    b = np.concatenate([mu.weights, nu.weights, [1.0]])
    res = linprog(cost.ravel(), A_eq=np.array(A), b_eq=b, bounds=(0, None), method="highs-ipm")
    if res.status != 0:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(res.fun)


# ---------------------------------------------------------------------------
# maximal coupling
# ---------------------------------------------------------------------------


@dataclass
class CoupledInitials:
    x: np.ndarray
    x_alive: np.ndarray
    y: np.ndarray
    y_alive: np.ndarray
    matched: np.ndarray


def maximal_coupling_initials(mu: SubProbMeasure, nu: SubProbMeasure, N: int, seed: int,
                              cemetery=None) -> CoupledInitials:
    """``N`` pairs from the maximal coupling of the cemetery-augmented discrete measures.

    The common part ``min(mu, nu)`` is matched identically; the residuals are
    paired independently.  Dead samples are placed at ``cemetery`` (default
    the origin) with the alive flag off.
    """
    if N < 1:
        raise ValueError("N must be positive")
    dim = mu.dim if len(mu) else nu.dim
    pts = np.vstack([mu.atoms.reshape(-1, dim), nu.atoms.reshape(-1, dim)])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    k = len(uniq)
    pm = np.zeros(k + 1)
    pn = np.zeros(k + 1)
    np.add.at(pm, inv[: len(mu)], mu.weights)
    np.add.at(pn, inv[len(mu):], nu.weights)
    pm[k], pn[k] = mu.defect, nu.defect
    common = np.minimum(pm, pn)
    overlap = float(common.sum())
    gen = path_generator(seed, 0)
    u = gen.random(N)
    matched = u < overlap
    dead = np.zeros(dim) if cemetery is None else np.asarray(cemetery, dtype=float)
    support = np.vstack([uniq, dead])

    def draw(p, size):
        p = np.clip(p, 0.0, None)
        return gen.choice(k + 1, size=size, p=p / p.sum()) if size else np.zeros(0, dtype=int)

    ix = np.empty(N, dtype=int)
    iy = np.empty(N, dtype=int)
    nm = int(matched.sum())
    if nm:
        ix[matched] = iy[matched] = draw(common, nm)
    if N - nm:
        ix[~matched] = draw(pm - common, N - nm)
        iy[~matched] = draw(pn - common, N - nm)
    return CoupledInitials(support[ix], ix < k, support[iy], iy < k, matched)
