"""Experiment runners behind the command line.

Each runner takes a validated :class:`ExperimentConfig` and an output
directory, writes its tables there and returns ``(files, gates)`` where
``gates`` maps a check name to pass/fail.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .bismut import estimate_gradient, gradient_bound_scan, payoff
from .coefficients import Coefficients, mollify, preset
from .config import ConfigError, ExperimentConfig
from .ddsde import MeasureFlow, interacting_particles, picard_solve
from .domain import Domain, HalfSpace, Slab, domain_from_config
from .engine import EnsembleSpec, TimeGrid
from .measures import SubProbMeasure, tv_report, w1_truncated
from .oracles import KernelOracle, halfline_kernel, halfline_survival, pde_solve_1d
from .rng import stable_mean_se

Runner = Callable[[ExperimentConfig, Path], tuple[list[str], dict[str, bool]]]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(fmt(v) for v in value)
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list], append: bool = False) -> None:
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_domain(cfg: ExperimentConfig) -> Domain:
    return domain_from_config(cfg.domain)


def build_coefficients(cfg: ExperimentConfig, domain: Domain) -> Coefficients:
    spec = cfg.coefficients
    params = dict(spec.get("params", {}))
    if spec["preset"] == "singular-mean-field":
        params["domain"] = domain
    try:
        return preset(spec["preset"], dim=domain.dim, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"coefficients.params: {exc}") from exc


def _regularized(coeffs: Coefficients, cfg: ExperimentConfig, center) -> Coefficients:
    """Mollified version of a singular preset (index ``params.n_mollify``, default 10)."""
    if not coeffs.singular:
        return coeffs
    if coeffs.singular_spec is None:
        return coeffs
    n = int(cfg.params.get("n_mollify", 10))
    half = float(cfg.params.get("mollify_halfwidth", 3.0))
    center = np.asarray(center, dtype=float)
    return mollify(coeffs, n, (center - half, center + half), horizon=cfg.grid["horizon"])


def _quarters(grid: TimeGrid) -> list[float]:
    """Grid nodes nearest to 0, T/4, T/2, 3T/4 and T."""
    return [grid.times[round(grid.steps * k / 4)] for k in range(5)]


def _grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid(cfg.grid["horizon"], cfg.grid["dt"])


def _point(value, domain: Domain, name: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(value, dtype=float))
    if x.shape != (domain.dim,):
        raise ConfigError(f"{name}: expected {domain.dim} coordinates")
    return x


def _default_x0(domain: Domain) -> list[float]:
    if isinstance(domain, HalfSpace):
        return (domain.boundary_point() + np.asarray(domain.normal) / np.linalg.norm(domain.normal)).tolist()
    if isinstance(domain, Slab):
        mid = 0.5 * (domain.a + domain.b)
        n = np.asarray(domain.normal) / np.linalg.norm(domain.normal)
        return (mid * n).tolist()
    return list(domain.center)


def _payoff_from(params: dict, dim: int):
    spec = params.get("f", "one")
    if isinstance(spec, str):
        return payoff(spec, dim), spec
    return payoff(spec.get("name", "one"), dim, **{k: v for k, v in spec.items() if k != "name"}), spec.get("name")


def _initial_from(value, domain: Domain, name: str) -> SubProbMeasure:
    if isinstance(value, str):
        return SubProbMeasure.from_csv(value).check_in(domain)
    if isinstance(value, dict) and "dirac" in value:
        return SubProbMeasure.dirac(_point(value["dirac"], domain, f"{name}.dirac"),
                                    float(value.get("mass", 1.0))).check_in(domain)
    if isinstance(value, dict) and "atoms" in value:
        return SubProbMeasure(np.asarray(value["atoms"], dtype=float).reshape(-1, domain.dim),
                              np.asarray(value["weights"], dtype=float)).check_in(domain)
    raise ConfigError(f"{name}: expected a cloud file path, {{'dirac': x}} or {{'atoms', 'weights'}}")


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _survival_oracle(cfg: ExperimentConfig, domain: Domain, coeffs: Coefficients, x0: np.ndarray, ts):
    """Exact or PDE survival probabilities for one-dimensional measure-free runs; ``None`` otherwise."""
    if domain.dim != 1 or coeffs.measure_dependent or coeffs.sigma is None:
        return None
    s = float(abs(coeffs.sigma[0, 0]))
    if coeffs.name == "constant" and np.allclose(coeffs.params.get("c", [0.0]), 0.0):
        if isinstance(domain, HalfSpace):
            return [float(halfline_survival(t, domain.distance_to_boundary(x0), s)) for t in ts]
        if isinstance(domain, Slab):
            pos = float(x0 @ np.asarray(domain.normal))
            oracle = KernelOracle("interval", domain.a, domain.b, s)
            return [oracle.total_mass(t, pos) for t in ts]
    # general one-dimensional drift: PDE oracle on a truncated interval
    n = float(np.asarray(domain.normal)[0]) if hasattr(domain, "normal") else 1.0
    if isinstance(domain, Slab):
        lo, hi = domain.a, domain.b
    elif isinstance(domain, HalfSpace):
        lo, hi = domain.offset, domain.offset + 20.0
    else:
        return None
    drift = lambda y: coeffs.drift(0.0, (y * n).reshape(-1, 1))[:, 0] * n
    dx = (hi - lo) / round((hi - lo) / 2e-3)
    values = []
    for t in ts:
        sol = pde_solve_1d(drift, s, (lo, hi), lambda y: np.ones_like(y), t, dx, dt=min(dx, t / 50))
        values.append(sol.at(float(x0[0] * n)))
    return values


def run_survival(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    coeffs = build_coefficients(cfg, domain)
    grid = _grid(cfg)
    x0 = _point(cfg.params.get("x0", _default_x0(domain)), domain, "params.x0")
    ts = cfg.params.get("times") or _quarters(grid)[1:]
    ts = [float(t) for t in ts]
    for t in ts:
        grid.node(t)
    spec = EnsembleSpec(coeffs, domain, grid, cfg.paths, x0=x0, seed=cfg.seed, bridge=cfg.bridge,
                        threads=cfg.threads)
    alive = np.concatenate(spec.map(lambda p: p.alive[:, [grid.node(t) for t in ts]]))
    oracle = _survival_oracle(cfg, domain, coeffs, x0, ts)
    rows, gates = [], {}
    for i, t in enumerate(ts):
        mean, se = stable_mean_se(alive[:, i].astype(float))
        ref = math.nan if oracle is None else oracle[i]
        rows.append([t, mean, ref, se])
        if oracle is not None:
            gates[f"survival_t={t:g}_within_4se"] = abs(mean - ref) <= 4 * max(se, 1.0 / cfg.paths)
    gates["survival_nonincreasing"] = all(b[1] <= a[1] for a, b in zip(rows, rows[1:]))
    write_csv(out / "survival.csv", ["t", "mc_survival", "oracle_survival", "std_error"], rows)
    return ["survival.csv"], gates


def run_gradient(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    p = cfg.params
    x = _point(p.get("x", _default_x0(domain)), domain, "params.x")
    v = _point(p.get("v", [1.0] + [0.0] * (domain.dim - 1)), domain, "params.v")
    t = float(p.get("t", cfg.grid["horizon"]))
    if not domain.contains(x):
        raise ConfigError("params.x: start point must be interior")
    coeffs = _regularized(build_coefficients(cfg, domain), cfg, x)
    grid = TimeGrid(t, cfg.grid["dt"])
    f, fname = _payoff_from(p, domain.dim)
    spec = EnsembleSpec(coeffs, domain, grid, cfg.paths, x0=x, seed=cfg.seed, bridge=cfg.bridge,
                        threads=cfg.threads)
    est = estimate_gradient(spec, f, v, t, epsilon=float(p.get("epsilon", 1.0)))
    record = est.to_record()
    record["params"].update({"x": x.tolist(), "f": fname, "p": p.get("p", 2), "n_mollify": p.get("n_mollify")})
    write_json(out / "gradient.json", record)
    write_csv(out / "gradient_runs.csv",
              ["x", "v", "t", "f", "value", "std_error", "semigroup_value", "semigroup_std_error", "n", "survivors"],
              [[x, v, t, fname, est.value, est.std_error, est.semigroup_value, est.semigroup_std_error, est.n,
                est.survivors]], append=True)
    return ["gradient.json", "gradient_runs.csv"], {"gradient_finite": math.isfinite(est.value)}


def run_metrics(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    p = cfg.params
    if "mu" not in p or "nu" not in p:
        raise ConfigError("params.mu: two clouds (params.mu, params.nu) are required")
    mu = _initial_from(p["mu"], domain, "params.mu")
    nu = _initial_from(p["nu"], domain, "params.nu")
    width = float(p.get("bin_width", 0.1))
    tv = tv_report(mu, nu, width)
    w1 = w1_truncated(mu, nu, domain, "euclidean")
    w1_rho = w1_truncated(mu, nu, domain, "intrinsic")
    record = {"tv": tv["tv"], "tv_fine": tv["tv_fine"], "bin_width": width, "tv_unstable": tv["unstable"],
              "w1": w1, "w1_rho": w1_rho, "defects": {"mu": mu.defect, "nu": nu.defect}}
    write_json(out / "metrics.json", record)
    write_csv(out / "metrics.csv", ["tv", "tv_fine", "bin_width", "w1", "w1_rho", "defect_mu", "defect_nu"],
              [[tv["tv"], tv["tv_fine"], width, w1, w1_rho, mu.defect, nu.defect]])
    return ["metrics.json", "metrics.csv"], {"w1_le_w1_rho": w1 <= w1_rho + 1e-9}


def run_ddsde(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    coeffs = build_coefficients(cfg, domain)
    grid = _grid(cfg)
    p = cfg.params
    initial = _initial_from(p.get("initial", {"dirac": _default_x0(domain)}), domain, "params.initial")
    method = p.get("method", "picard")
    width = float(p.get("bin_width", 0.05))
    files, gates = [], {}
    if method == "picard":
        res = picard_solve(initial, coeffs, domain, grid, cfg.paths, lam=p.get("lambda"),
                           tol=float(p.get("tol", 1e-3)), max_iter=int(p.get("iters", 10)), bin_width=width,
                           seed=cfg.seed, bridge=cfg.bridge, threads=cfg.threads)
        ratios = [math.nan] + res.ratios
        write_csv(out / "trace.csv", ["iteration", "distance", "ratio", "lambda"],
                  [[i + 1, d, r, res.lam] for i, (d, r) in enumerate(zip(res.trace, ratios))])
        files.append("trace.csv")
        gates["picard_converged"] = res.converged
        flow = res.flow
    elif method == "particles":
        flow = interacting_particles(initial, coeffs, domain, grid, cfg.paths, seed=cfg.seed, bridge=cfg.bridge)
    else:
        raise ConfigError(f"params.method: unknown method {method!r}")
    masses = flow.masses()
    write_csv(out / "mass.csv", ["t", "mass"], [[t, m] for t, m in zip(flow.times, masses)])
    files.append("mass.csv")
    gates["mass_nonincreasing"] = bool(np.all(np.diff(masses) <= 1e-12))
    (out / "clouds").mkdir(exist_ok=True)
    snaps = p.get("snapshots") or _quarters(grid)
    for t in snaps:
        k = grid.node(float(t))
        name = f"clouds/flow_{k:06d}.csv"
        flow.measures[k].to_csv(out / name)
        files.append(name)
    return files, gates


def run_bound_scan(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    coeffs = build_coefficients(cfg, domain)
    p = cfg.params
    xs = [_point(x, domain, "params.xs") for x in p.get("xs", [[0.05], [0.1], [0.2], [0.4]])]
    ts = [float(t) for t in p.get("ts", [0.05, 0.1, 0.2, 0.5, 1.0])]
    coeffs = _regularized(coeffs, cfg, xs[0])
    f, _ = _payoff_from(p, domain.dim)
    rows = gradient_bound_scan(coeffs, domain, f, xs, ts, float(p.get("p", 4)), N=cfg.paths, dt=cfg.grid["dt"],
                               seed=cfg.seed, bridge=cfg.bridge, threads=cfg.threads)
    write_csv(out / "bound_scan.csv",
              ["x", "t", "rho", "gradient", "gradient_se", "semigroup_p", "ratio", "unnormalized", "energy"],
              [[r.x, r.t, r.rho, r.gradient, r.gradient_se, r.semigroup_p, r.ratio, r.unnormalized, r.energy]
               for r in rows])
    ratios = [r.ratio for r in rows]
    return ["bound_scan.csv"], {"ratios_finite": all(math.isfinite(r) for r in ratios)}


def run_oracle(cfg: ExperimentConfig, out: Path):
    domain = build_domain(cfg)
    p = cfg.params
    sigma = float(p.get("sigma", 1.0))
    if isinstance(domain, Slab) and domain.dim == 1:
        oracle = KernelOracle("interval", domain.a, domain.b, sigma)
    elif isinstance(domain, HalfSpace) and domain.dim == 1 and domain.normal[0] > 0:
        oracle = KernelOracle("halfline", domain.offset, math.inf, sigma)
    else:
        raise ConfigError("domain: kernel oracles exist for one-dimensional half-lines and intervals only")
    ts = [float(t) for t in p.get("ts", [0.25, 0.5, 1.0])]
    xs = [float(x) for x in p.get("xs", np.linspace(0.1, 2.0, 20).tolist())]
    spec = p.get("f", "one")
    fvec, _ = _payoff_from(p, 1)
    f = lambda y: float(fvec(np.array([[y]]))[0])
    breaks = tuple(float(b) for b in p.get("breaks", ()))
    if isinstance(spec, dict) and spec.get("name") == "indicator":
        breaks = breaks + (float(spec.get("lo", 0.0)), float(spec.get("hi", 2.0)))
    rows = []
    for t in ts:
        for x in xs:
            rows.append([t, x, oracle.semigroup(f, t, x, breaks), oracle.gradient(f, t, x, breaks)])
    write_csv(out / "oracle.csv", ["t", "x", "semigroup", "gradient"], rows)
    ok = all(0.0 <= r[2] <= 1.0 + 1e-9 for r in rows) if spec in ("one", {"name": "one"}) else True
    return ["oracle.csv"], {"oracle_sub_markov": ok}


def run_validate(cfg: ExperimentConfig, out: Path):
    from .validation import run_invariant_suite

    results = run_invariant_suite(seed=cfg.seed, paths=min(cfg.paths, 4000), threads=cfg.threads)
    write_csv(out / "validate.csv", ["check", "passed", "detail"], [[r.name, r.passed, r.detail] for r in results])
    return ["validate.csv"], {r.name: r.passed for r in results}


RUNNERS: dict[str, Runner] = {
    "survival": run_survival,
    "gradient": run_gradient,
    "metrics": run_metrics,
    "ddsde": run_ddsde,
    "bound-scan": run_bound_scan,
    "oracle": run_oracle,
    "validate": run_validate,
}


def run(cfg: ExperimentConfig, out_dir=None) -> tuple[dict, int]:
    """Execute an experiment; returns the manifest and the exit status (0 iff every gate passed)."""
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files, gates = RUNNERS[cfg.kind](cfg, out)
    manifest = {
        "config": cfg.to_dict(),
        "code_version": __version__,
        "wall_time_seconds": time.perf_counter() - start,
        "files": files,
        "gates": gates,
        "passed": all(gates.values()),
    }
    write_json(out / "manifest.json", manifest)
    return manifest, 0 if manifest["passed"] else 1
