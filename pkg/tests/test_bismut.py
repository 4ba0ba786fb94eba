from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from killsde.bismut import (
    bismut_integral,
    build_beta,
    comparison_constant,
    estimate_gradient,
    fd_gradient_crn,
    gradient_bound_scan,
    payoff,
    smooth_cutoff_dh,
    smooth_cutoff_h,
)
from killsde.coefficients import preset
from killsde.domain import Ball, half_line, interval
from killsde.engine import EnsembleSpec, TimeGrid, simulate_ensemble, simulate_variation
from killsde.rng import stable_mean_se

GRADIENT_ONE_X1_T05 = math.sqrt(2 / (math.pi * 0.5)) * math.exp(-1.0)  # d/dx erf(x / sqrt(2t)) at x = 1, t = 1/2


@pytest.mark.parametrize("r1", [0.1, 0.5, 1.0])
def test_cutoff_examples(r1):
    assert smooth_cutoff_h(0.0, r1) == 0.0
    assert smooth_cutoff_h(r1 / 4, r1) == pytest.approx(r1 / 4, abs=1e-15)
    assert smooth_cutoff_h(2 * r1, r1) == 1.0
    r = np.linspace(0, 2 * r1, 10_000)
    assert np.all(smooth_cutoff_dh(r, r1) >= 0)
    h = smooth_cutoff_h(r, r1)
    assert np.all((h >= 0) & (h <= 1))


@pytest.mark.parametrize("r1", [0.2, 0.5, 1.0])
def test_cutoff_is_c2(r1):
    # the second derivative is continuous at both junctions: its one-sided
    # difference quotients differ by O(eps) (the third derivative jumps)
    def jump(r, eps):
        left = (smooth_cutoff_dh(r - eps, r1) - smooth_cutoff_dh(r - 2 * eps, r1)) / eps
        right = (smooth_cutoff_dh(r + 2 * eps, r1) - smooth_cutoff_dh(r + eps, r1)) / eps
        return abs(left - right)

    for r in (r1 / 2, r1):
        coarse, fine = jump(r, 1e-3 * r1), jump(r, 1e-4 * r1)
        assert fine < 0.2 * coarse + 1e-6
        assert abs(smooth_cutoff_h(r + 1e-6, r1) - smooth_cutoff_h(r - 1e-6, r1)) < 3e-6


def test_cutoff_rejects_large_radius():
    with pytest.raises(ValueError):
        smooth_cutoff_h(0.5, 1.5)


def test_comparison_constant_finite():
    d = half_line(r1=0.5)
    c0 = comparison_constant(d, np.linspace(0.001, 5, 500)[:, None])
    assert 1.0 <= c0 < 10.0


def test_beta_deep_interior_is_linear_ramp():
    grid = TimeGrid(0.5, 0.01)
    p = simulate_ensemble(preset("constant"), half_line(offset=-100.0), grid, 10, x0=(0.0,), seed=1)
    b = build_beta(p, half_line(offset=-100.0), 0.5)
    assert np.allclose(b.beta, 1 - grid.times / 0.5, atol=1e-12)
    assert np.allclose(b.beta_prime, -1 / 0.5, atol=1e-12)
    assert np.allclose(b.energy, 1 / 0.5, rtol=1e-12)


def test_beta_clamped_at_death():
    dom = half_line()
    p = simulate_ensemble(preset("constant"), dom, TimeGrid(1.0, 0.01), 400, x0=(0.05,), seed=2)
    b = build_beta(p, dom, 1.0)
    assert np.all(b.beta[:, 0] == 1.0)
    assert np.all(np.diff(b.beta, axis=1) <= 1e-15)
    for i in np.flatnonzero(p.killed):
        k = int(np.argmin(p.alive[i]))
        assert np.all(b.beta[i, k:] == 0.0)


def test_beta_exhausts_before_death():
    # the clock diverges before the killing time; on the grid the share of killed
    # paths whose weight is exhausted strictly before death grows as dt shrinks
    dom = half_line(r1=0.5)
    shares = []
    for dt in (1e-2, 1e-3):
        p = simulate_ensemble(preset("constant"), dom, TimeGrid(1.0, dt), 2000, x0=(0.1,), seed=3)
        b = build_beta(p, dom, 1.0)
        k = p.killed
        ex = b.exhaust[k]
        shares.append(np.mean((ex >= 0) & (p.grid.times[np.maximum(ex, 0)] < p.tau[k])))
    assert shares[1] > shares[0] + 0.2 and shares[1] > 0.75


def test_dead_start_gives_zero_integral():
    dom = half_line()
    p = simulate_ensemble(preset("constant"), dom, TimeGrid(0.5, 0.01), 5, x0=(0.0,), seed=4)
    b = build_beta(p, dom, 0.5)
    assert np.all(b.beta_prime == 0)
    v = simulate_variation(p, preset("constant"), (1.0,))
    assert np.all(bismut_integral(p, v, b, preset("constant")) == 0)


@pytest.mark.parametrize("name,dom,x0", [("constant", half_line(), (0.3,)), ("ou", interval(0.0, 2.0), (0.5,)),
                                         ("ou", Ball(center=(0.0, 0.0), radius=1.0), (0.3, 0.4))])
def test_integral_is_centered(name, dom, x0):
    c = preset(name, dom.dim)
    p, v = simulate_ensemble(c, dom, TimeGrid(0.5, 0.005), 4000, x0=x0, seed=5, v0=np.eye(dom.dim)[0])
    integral = bismut_integral(p, v, build_beta(p, dom, 0.5), c)
    m, se = stable_mean_se(integral)
    assert abs(m) <= 3 * se


def test_integral_isometry_deep_interior():
    t = 0.5
    dom = half_line(offset=-100.0)
    c = preset("constant")
    p, v = simulate_ensemble(c, dom, TimeGrid(t, 0.01), 20000, x0=(0.0,), seed=6, v0=(1.0,))
    integral = bismut_integral(p, v, build_beta(p, dom, t), c)
    assert np.allclose(integral, -p.dW.sum(axis=(1, 2)) / t, atol=1e-12)
    assert np.var(integral) == pytest.approx(1 / t, rel=0.05)


def test_zero_payoff():
    spec = EnsembleSpec(preset("ou"), half_line(), TimeGrid(0.5, 0.01), 500, x0=(0.4,), seed=7)
    est = estimate_gradient(spec, payoff("zero"), (1.0,), 0.5)
    assert est.value == 0.0 and est.std_error == 0.0
    fd = fd_gradient_crn((0.4,), (1.0,), 0.05, payoff("zero"), 0.5, preset("ou"), half_line(), N=200, dt=0.01)
    assert fd.value == 0.0


def test_gradient_matches_kernel_moderate_n():
    spec = EnsembleSpec(preset("constant"), half_line(), TimeGrid(0.5, 1e-3), 20000, x0=(1.0,), seed=8)
    est = estimate_gradient(spec, payoff("one"), (1.0,), 0.5)
    assert abs(est.value - GRADIENT_ONE_X1_T05) <= 3 * est.std_error
    assert est.semigroup_value == pytest.approx(math.erf(1.0), abs=4 * est.semigroup_std_error)


def test_stored_and_streamed_estimates_agree():
    dom, c = half_line(), preset("ou")
    grid = TimeGrid(0.4, 0.01)
    spec = EnsembleSpec(c, dom, grid, 300, x0=(0.5,), seed=9, chunk=128)
    a = estimate_gradient(spec, payoff("one"), (1.0,), 0.4)
    p = simulate_ensemble(c, dom, grid, 300, x0=(0.5,), seed=9)
    b = estimate_gradient(p, payoff("one"), (1.0,), 0.4, coeffs=c, domain=dom)
    assert a.value == pytest.approx(b.value, abs=1e-13)
    assert a.survivors == b.survivors


def test_gradient_is_linear_in_direction():
    dom = Ball(center=(0.0, 0.0), radius=1.0)
    spec = EnsembleSpec(preset("ou", 2), dom, TimeGrid(0.3, 0.01), 500, x0=(0.2, 0.1), seed=10)
    f = payoff("gaussian", 2, center=(0.3, 0.0), width=0.4)
    e1 = estimate_gradient(spec, f, (1.0, 0.0), 0.3).value
    e2 = estimate_gradient(spec, f, (0.0, 1.0), 0.3).value
    e12 = estimate_gradient(spec, f, (2.0, -1.0), 0.3).value
    assert e12 == pytest.approx(2 * e1 - e2, abs=1e-12)


def test_fd_step_halving_within_noise():
    dom = half_line()
    f = payoff("gaussian", 1, center=(1.0,), width=0.5)
    kw = dict(N=20000, dt=1e-3, seed=11)
    a = fd_gradient_crn((0.8,), (1.0,), 0.1, f, 0.3, preset("ou"), dom, **kw)
    b = fd_gradient_crn((0.8,), (1.0,), 0.05, f, 0.3, preset("ou"), dom, **kw)
    assert abs(a.value - b.value) < math.hypot(a.std_error, b.std_error)


def test_fd_rejects_points_outside():
    with pytest.raises(ValueError):
        fd_gradient_crn((0.01,), (1.0,), 0.1, payoff("one"), 0.3, preset("ou"), half_line(), N=10, dt=0.01)


def test_bound_scan_rows():
    rows = gradient_bound_scan(preset("constant"), half_line(), payoff("one"), [(0.1,), (0.4,)], [0.1, 0.2], 4,
                               N=2000, dt=1e-3, seed=12)
    assert len(rows) == 4
    assert all(math.isfinite(r.ratio) and r.ratio > 0 for r in rows)
    assert all(r.rho in (0.1, 0.4) for r in rows)


def test_time_must_be_a_node():
    p = simulate_ensemble(preset("constant"), half_line(), TimeGrid(0.5, 0.1), 5, x0=(1.0,), seed=1)
    with pytest.raises(ValueError):
        build_beta(p, half_line(), 0.25)
    with pytest.raises(ValueError):
        build_beta(p, half_line(), 0.7)


@given(st.sampled_from(["one", "zero", "indicator", "gaussian", "cosine"]))
def test_payoffs_vectorized(name):
    x = np.linspace(0.1, 3, 7)[:, None]
    assert payoff(name)(x).shape == (7,)


def test_unknown_payoff():
    with pytest.raises(ValueError):
        payoff("bogus")
