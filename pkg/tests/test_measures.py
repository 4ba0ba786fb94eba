from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from killsde.domain import Ball, half_line, interval
from killsde.measures import (
    SubProbMeasure,
    coupling_plan,
    histogram_noise_floor,
    maximal_coupling_initials,
    tv_distance,
    tv_report,
    w1_oracle,
    w1_truncated,
)


def dirac(x, m=1.0):
    return SubProbMeasure.dirac(x, m)


def random_measure(rng, lo, hi, k, dim=1):
    w = rng.dirichlet(np.ones(k)) * rng.uniform(0.1, 1.0)
    return SubProbMeasure(rng.uniform(lo, hi, (k, dim)), w)


def test_measure_validation():
    with pytest.raises(ValueError):
        SubProbMeasure(np.array([[0.5]]), np.array([-0.1]))
    with pytest.raises(ValueError):
        SubProbMeasure(np.array([[0.5], [0.6]]), np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        dirac(-1.0).check_in(half_line())
    mu = SubProbMeasure(np.array([[0.5], [0.6]]), np.array([0.3, 0.0]))
    assert len(mu) == 1 and mu.defect == pytest.approx(0.7)


def test_cloud_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mu = random_measure(rng, 0.1, 2.0, 7, dim=2)
    mu.to_csv(tmp_path / "c.csv")
    back = SubProbMeasure.from_csv(tmp_path / "c.csv")
    assert np.array_equal(back.atoms, mu.atoms) and np.array_equal(back.weights, mu.weights)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        SubProbMeasure.from_csv(tmp_path / "bad.csv")


def test_tv_examples():
    assert tv_distance(dirac(0.5), dirac(0.5), 0.1) == 0.0
    assert tv_distance(dirac(0.55), dirac(1.55), 0.1) == 2.0
    assert tv_distance(dirac(0.5), dirac(0.5, 0.5), 0.1) == 1.0


@given(st.integers(0, 10_000))
def test_tv_range_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 0, 3, 5), random_measure(rng, 0, 3, 4)
    a, b = tv_distance(mu, nu, 0.2), tv_distance(nu, mu, 0.2)
    assert a == b and 0.0 <= a <= 2.0


def test_tv_report_flags_unstable_binning():
    # same bin at width 0.1, different bins at width 0.05
    rep = tv_report(dirac(0.54), dirac(0.56), 0.1)
    assert rep["tv"] == 0.0 and rep["tv_fine"] == 2.0 and rep["unstable"]


def test_noise_floor_shrinks_with_n():
    mu = SubProbMeasure(np.linspace(0.05, 0.95, 10)[:, None], np.full(10, 0.08))
    a, b = histogram_noise_floor(mu, 0.1, 1000), histogram_noise_floor(mu, 0.1, 4000)
    assert a == pytest.approx(2 * b, rel=1e-12)


def test_w1_examples():
    d = interval(0.0, 2.0)
    assert w1_truncated(dirac(0.5), dirac(0.7), d) == pytest.approx(0.2, abs=1e-12)
    assert w1_truncated(dirac(1.0), dirac(1.0, 0.5), d) == pytest.approx(0.5, abs=1e-12)
    assert w1_oracle(dirac(1.0), dirac(1.0, 0.5), d) == pytest.approx(0.5, abs=1e-9)


def test_w1_intrinsic_closed_form():
    # rho(0.8, 1.2) on the half-line = log(1 / 0.8) + (1.2 - 1)
    d = half_line()
    assert w1_truncated(dirac(0.8), dirac(1.2), d, "intrinsic") == pytest.approx(math.log(1.25) + 0.2, abs=1e-12)
    assert w1_truncated(dirac(0.8), dirac(1.2), d) == pytest.approx(0.4, abs=1e-12)


def test_w1_cemetery_costs():
    d = half_line()
    # all of mu's mass goes to the cemetery: euclidean cost rho ^ 1, intrinsic cost 1
    assert w1_truncated(dirac(0.3), SubProbMeasure(np.zeros((0, 1)), np.zeros(0)), d) == pytest.approx(0.3)
    assert w1_truncated(dirac(0.3), SubProbMeasure(np.zeros((0, 1)), np.zeros(0)), d, "intrinsic") == pytest.approx(1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_w1_matches_oracle_and_ordering(seed):
    rng = np.random.default_rng(seed)
    d = interval(0.0, 3.0)
    mu = random_measure(rng, 0.01, 2.99, int(rng.integers(1, 11)))
    nu = random_measure(rng, 0.01, 2.99, int(rng.integers(1, 11)))
    w1 = w1_truncated(mu, nu, d)
    assert abs(w1 - w1_oracle(mu, nu, d)) < 1e-9
    assert w1 <= w1_truncated(mu, nu, d, "intrinsic") + 1e-12


def test_w1_oracle_in_2d():
    rng = np.random.default_rng(3)
    d = Ball(center=(0.0, 0.0), radius=1.0)
    for _ in range(5):
        mu = SubProbMeasure(rng.uniform(-0.6, 0.6, (4, 2)), rng.dirichlet(np.ones(4)) * 0.8)
        nu = SubProbMeasure(rng.uniform(-0.6, 0.6, (3, 2)), rng.dirichlet(np.ones(3)) * 0.6)
        assert abs(w1_truncated(mu, nu, d) - w1_oracle(mu, nu, d)) < 1e-9


def test_plan_marginals():
    rng = np.random.default_rng(4)
    mu, nu = random_measure(rng, 0.1, 1.9, 4), random_measure(rng, 0.1, 1.9, 5)
    _, plan = coupling_plan(mu, nu, interval(0.0, 2.0))
    assert np.allclose(plan.sum(axis=1), np.append(mu.weights, mu.defect), atol=1e-12)
    assert np.allclose(plan.sum(axis=0), np.append(nu.weights, nu.defect), atol=1e-12)


def test_large_clouds_use_quantized_assignment():
    rng = np.random.default_rng(5)
    d = half_line()
    n = 400
    mu = SubProbMeasure(rng.uniform(0.01, 3, (n, 1)), np.full(n, 0.9 / n))
    nu = SubProbMeasure(rng.uniform(0.01, 3, (n, 1)), np.full(n, 0.7 / n))
    exact, _ = coupling_plan(mu, nu, d)
    assert w1_truncated(mu, nu, d) == pytest.approx(exact, abs=5e-3)


def test_coincident_atoms_merge_exactly():
    d = half_line()
    many = SubProbMeasure(np.full((5000, 1), 1.0), np.full(5000, 1 / 5000))
    assert w1_truncated(many, dirac(1.5), d) == pytest.approx(0.5, abs=1e-9)


def test_maximal_coupling_examples():
    a, b = np.array([0.5]), np.array([1.5])
    same = maximal_coupling_initials(dirac(a), dirac(a), 500, seed=1)
    assert same.matched.all() and np.array_equal(same.x, same.y)
    apart = maximal_coupling_initials(dirac(a), dirac(b), 500, seed=1)
    assert not apart.matched.any()
    N = 20000
    mix = SubProbMeasure(np.array([[0.5], [1.5]]), np.array([0.5, 0.5]))
    half = maximal_coupling_initials(mix, dirac(a), N, seed=2)
    assert abs(half.matched.mean() - 0.5) <= 3 * math.sqrt(0.25 / N)


def test_maximal_coupling_marginals():
    N = 20000
    mu = SubProbMeasure(np.array([[0.5], [1.5]]), np.array([0.3, 0.4]))
    nu = SubProbMeasure(np.array([[0.5]]), np.array([0.9]))
    c = maximal_coupling_initials(mu, nu, N, seed=3)
    assert abs(np.mean(c.x_alive) - 0.7) < 4 * math.sqrt(0.21 / N)
    assert abs(np.mean(c.y_alive) - 0.9) < 4 * math.sqrt(0.09 / N)
