"""Quick invariant checks run by ``killsde validate``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bismut import build_beta, estimate_gradient, payoff
from .coefficients import preset
from .ddsde import interacting_particles
from .domain import Ball, half_line, interval
from .engine import EnsembleSpec, TimeGrid, simulate_ensemble
from .measures import SubProbMeasure, tv_distance, w1_oracle, w1_truncated
from .oracles import KernelOracle, halfline_survival
from .rng import draw_noise, stable_mean_se


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng_reproducible(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    a = draw_noise(seed, np.arange(50), 20, 2)
    b = draw_noise(seed, np.arange(50), 20, 2)
    c = draw_noise(seed, np.arange(25, 50), 20, 2)
    same = all(np.array_equal(x, y) for x, y in zip(a, b))
    subset = np.array_equal(a[0][25:], c[0])
    return same and subset, f"repeatable={same} index_addressed={subset}"


def _chunk_and_thread_invariance(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    dom = Ball(center=(0.0, 0.0), radius=1.0)
    coeffs = preset("ou", 2)
    grid = TimeGrid(0.2, 0.01)
    n = min(paths, 600)
    ref = simulate_ensemble(coeffs, dom, grid, n, x0=(0.3, 0.1), seed=seed, chunk=n)
    other = simulate_ensemble(coeffs, dom, grid, n, x0=(0.3, 0.1), seed=seed, chunk=97, threads=max(threads, 4))
    ok = np.array_equal(ref.states, other.states) and np.array_equal(ref.tau, other.tau)
    return ok, f"paths={n} identical={ok}"


def _killing_absorbing(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    dom = half_line()
    grid = TimeGrid(1.0, 0.01)
    p = simulate_ensemble(preset("constant", 1), dom, grid, paths, x0=(0.3,), seed=seed, threads=threads)
    alive_mono = bool(np.all(np.diff(p.alive.astype(int), axis=1) <= 0))
    live_inside = bool(np.all(dom.contains(p.states[p.alive])))
    dead = ~p.alive
    frozen = True
    for k in range(1, grid.steps + 1):
        both = dead[:, k] & dead[:, k - 1]
        frozen &= bool(np.array_equal(p.states[both, k], p.states[both, k - 1]))
    first_dead = dead[:, 1:] & p.alive[:, :-1]
    rows, cols = np.nonzero(first_dead)
    on_bdry = bool(np.all(np.abs(dom.signed_distance(p.states[rows, cols + 1])) < 1e-9)) if len(rows) else True
    ok = alive_mono and live_inside and frozen and on_bdry
    return ok, f"monotone={alive_mono} interior={live_inside} frozen={frozen} on_boundary={on_bdry}"


def _survival_oracle(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    grid = TimeGrid(0.5, 1e-3)
    spec = EnsembleSpec(preset("constant", 1), half_line(), grid, paths, x0=(0.5,), seed=seed, threads=threads)
    alive = np.concatenate(spec.map(lambda p: p.alive[:, -1]))
    mean, se = stable_mean_se(alive.astype(float))
    exact = float(halfline_survival(0.5, 0.5))
    # bridge correction leaves an O(dt) bias far below the statistical error here
    ok = abs(mean - exact) <= 4 * se + 0.01
    return ok, f"mc={mean:.5f} se={se:.5f} exact={exact:.5f}"


def _beta_invariants(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    failures = []
    cases = [(half_line(r1=0.5), preset("ou", 1), (0.2,)), (interval(0.0, 2.0), preset("constant", 1), (0.4,)),
             (Ball(center=(0.0, 0.0), radius=1.0), preset("ou", 2), (0.5, 0.2))]
    for dom, coeffs, x0 in cases:
        grid = TimeGrid(0.5, 0.005)
        p = simulate_ensemble(coeffs, dom, grid, min(paths, 2000), x0=x0, seed=seed, threads=threads)
        for t in (0.1, 0.5):
            b = build_beta(p, dom, t)
            kt = b.t_index
            checks = {
                "start": np.all(b.beta[:, 0] == 1.0),
                "range": np.all((b.beta >= 0) & (b.beta <= 1)),
                "monotone": np.all(np.diff(b.beta, axis=1) <= 1e-15),
                "zero_at_t": np.all(b.beta[:, kt] == 0.0),
                "zero_when_dead": np.all(b.beta[~p.alive[:, : kt + 1]] == 0.0),
                "slope_nonpositive": np.all(b.beta_prime <= 0),
                "energy_finite": np.all(np.isfinite(b.energy)),
            }
            failures += [f"{type(dom).__name__}/t={t}/{k}" for k, v in checks.items() if not v]
    return not failures, "all hold" if not failures else ", ".join(failures)


def _zero_payoff(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    grid = TimeGrid(0.2, 0.01)
    spec = EnsembleSpec(preset("ou", 1), half_line(), grid, min(paths, 1000), x0=(0.3,), seed=seed, threads=threads)
    est = estimate_gradient(spec, payoff("zero"), (1.0,), 0.2)
    return est.value == 0.0 and est.std_error == 0.0, f"value={est.value!r}"


def _metric_ranges(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    dom = interval(0.0, 3.0)
    ok, worst_lp = True, 0.0
    for _ in range(10):
        mu = SubProbMeasure(rng.uniform(0.01, 2.99, (6, 1)), rng.dirichlet(np.ones(6)) * rng.uniform(0.2, 1))
        nu = SubProbMeasure(rng.uniform(0.01, 2.99, (5, 1)), rng.dirichlet(np.ones(5)) * rng.uniform(0.2, 1))
        tv = tv_distance(mu, nu, 0.1)
        w1 = w1_truncated(mu, nu, dom, "euclidean")
        w1r = w1_truncated(mu, nu, dom, "intrinsic")
        worst_lp = max(worst_lp, abs(w1 - w1_oracle(mu, nu, dom, "euclidean")))
        ok &= 0.0 <= tv <= 2.0 and 0.0 <= w1 <= w1r + 1e-9 <= 1.0 + 1e-9
    ok &= worst_lp < 1e-7
    return bool(ok), f"max |lp - oracle| = {worst_lp:.2e}"


def _mass_nonincreasing(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    grid = TimeGrid(0.5, 0.01)
    flow = interacting_particles(SubProbMeasure.dirac((0.5,)), preset("mean-field-attraction", 1), half_line(),
                                 grid, min(paths, 2000), seed=seed)
    m = flow.masses()
    ok = bool(np.all(np.diff(m) <= 1e-12)) and m[0] == 1.0
    return ok, f"mass {m[0]:.4f} -> {m[-1]:.4f}"


def _kernel_consistency(seed: int, paths: int, threads: int) -> tuple[bool, str]:
    wide = KernelOracle("interval", 0.0, 40.0)
    half = KernelOracle("halfline")
    diff = max(abs(wide.total_mass(t, x) - float(halfline_survival(t, x)))
               for t in (0.1, 0.5, 1.0) for x in (0.2, 1.0, 3.0))
    return diff < 1e-9, f"max interval/half-line gap {diff:.2e}; half-line mass {half.total_mass(0.5, 1.0):.6f}"


CHECKS: dict[str, Callable[[int, int, int], tuple[bool, str]]] = {
    "rng_reproducible": _rng_reproducible,
    "chunk_and_thread_invariance": _chunk_and_thread_invariance,
    "killing_absorbing": _killing_absorbing,
    "survival_matches_exact": _survival_oracle,
    "beta_invariants": _beta_invariants,
    "zero_payoff_zero_gradient": _zero_payoff,
    "metric_ranges": _metric_ranges,
    "mass_nonincreasing": _mass_nonincreasing,
    "kernel_consistency": _kernel_consistency,
}


def run_invariant_suite(seed: int, paths: int = 4000, threads: int = 1) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(seed, paths, threads)
        except Exception as exc:  # a crash is a failed check, reported with its message
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
