from __future__ import annotations

import numpy as np
import pytest

from killsde.coefficients import Coefficients, preset
from killsde.ddsde import (
    MeasureFlow,
    design_lambda,
    flow_distance,
    frozen_flow_map,
    girsanov_compare,
    interacting_particles,
    picard_solve,
    stability_experiment,
)
from killsde.domain import half_line
from killsde.engine import TimeGrid
from killsde.measures import SubProbMeasure, histogram_noise_floor, tv_distance

GRID = TimeGrid(0.5, 0.01)
DOM = half_line()
START = SubProbMeasure.dirac((1.0,))


def test_measure_free_drift_ignores_flow():
    other = MeasureFlow.constant(SubProbMeasure.dirac((3.0,), 0.4), GRID)
    a = frozen_flow_map(MeasureFlow.constant(START, GRID), START, preset("ou"), DOM, GRID, 500, seed=1)
    b = frozen_flow_map(other, START, preset("ou"), DOM, GRID, 500, seed=1)
    assert all(np.array_equal(x.atoms, y.atoms) for x, y in zip(a.measures, b.measures))


def test_frozen_dynamics_keep_initial_law():
    still = Coefficients(1, 1, lambda t, x, s: np.zeros_like(x), diffusion_fn=lambda t, x: np.zeros((len(x), 1, 1)),
                         statistic=lambda mu: 0.0)
    init = SubProbMeasure(np.array([[0.5], [1.5]]), np.array([0.25, 0.5]))
    flow = frozen_flow_map(MeasureFlow.constant(init, GRID), init, still, DOM, GRID, 400, seed=2)
    for m in flow.measures:
        assert tv_distance(m, init, 0.1) < 1e-12
    assert np.allclose(flow.masses(), 0.75)


def test_mass_at_zero_is_initial_mass():
    init = SubProbMeasure.dirac((1.0,), 0.6)
    flow = interacting_particles(init, preset("mean-field-attraction"), DOM, GRID, 1000, seed=3)
    assert flow.masses()[0] == pytest.approx(0.6, abs=1e-12)
    assert np.all(np.diff(flow.masses()) <= 1e-12)


def test_independent_runs_agree_within_noise():
    c = preset("mean-field-attraction")
    N = 4000
    a = interacting_particles(START, c, DOM, GRID, N, seed=4).measures[-1]
    b = interacting_particles(START, c, DOM, GRID, N, seed=5).measures[-1]
    assert tv_distance(a, b, 0.1) <= histogram_noise_floor(a, 0.1, N)


def test_picard_measure_free_converges_immediately():
    res = picard_solve(START, preset("ou"), DOM, GRID, 500, lam=1.0, tol=1e-12, max_iter=3, seed=6)
    assert res.converged and len(res.trace) == 2 and res.trace[1] == 0.0


def test_picard_zero_coupling_is_baseline():
    res = picard_solve(START, preset("mean-field-attraction", kappa=0.0), DOM, GRID, 500, lam=1.0, max_iter=3, seed=7)
    base = frozen_flow_map(MeasureFlow.constant(START, GRID), START, preset("ou"), DOM, GRID, 500, seed=7)
    assert all(np.array_equal(x.atoms, y.atoms) for x, y in zip(res.flow.measures, base.measures))


def test_picard_contracts():
    c = preset("mean-field-attraction", kappa=0.2)
    res = picard_solve(START, c, DOM, GRID, 2000, lam=design_lambda(c), tol=1e-4, max_iter=6, seed=8)
    assert res.lam == pytest.approx(2.0)
    assert res.trace[1] < 0.5 * res.trace[0]


def test_particles_match_frozen_map_when_measure_free():
    a = interacting_particles(START, preset("ou"), DOM, GRID, 300, seed=9)
    b = frozen_flow_map(MeasureFlow.constant(START, GRID), START, preset("ou"), DOM, GRID, 300, seed=9)
    assert flow_distance(a, b, 1.0, 0.05) == 0.0


def test_girsanov_identity():
    c = preset("mass-drift")
    flow = MeasureFlow.constant(START, GRID)
    rep = girsanov_compare(flow, flow, START, c, DOM, GRID, 500, seed=10)
    assert np.all(rep.log_r == 0.0) and rep.entropy == 0.0 and rep.pinsker == 0.0
    assert rep.pinsker_holds


def test_girsanov_rejects_measure_free_preset():
    flow = MeasureFlow.constant(START, GRID)
    with pytest.raises(ValueError):
        girsanov_compare(flow, flow, START, preset("ou"), DOM, GRID, 10)


def test_stability_identical_initials():
    rows = stability_experiment(START, START, preset("mean-field-attraction"), DOM, GRID, [0.1, 0.5], 2000, seed=11)
    for r in rows:
        assert r.w1 == 0.0 and r.tv <= r.noise_floor


def test_flow_validation():
    with pytest.raises(ValueError):
        MeasureFlow(np.array([0.0, 0.0]), [START, START])
    with pytest.raises(ValueError):
        picard_solve(START, preset("ou"), DOM, GRID, 10, lam=-1.0)
    with pytest.raises(ValueError):
        interacting_particles(START, preset("ou"), DOM, GRID, 1)
