from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import erf

from killsde.oracles import (
    KernelOracle,
    halfline_kernel,
    halfline_survival,
    halfline_survival_dx,
    interval_kernel,
    pde_solve_1d,
)

# frozen reference values (closed forms evaluated once)
SURVIVAL_X1_T1 = 0.6826894921370859  # erf(1/sqrt 2)
GRADIENT_ONE_X1_T1 = 0.48394144903828684  # sqrt(2/pi) exp(-1/2)
GRADIENT_IND02_X1_T025 = 0.10798192087461034  # g(1) - g(3), g the N(0, 1/4) density


def test_frozen_values_match_closed_forms():
    assert SURVIVAL_X1_T1 == pytest.approx(erf(1 / math.sqrt(2)), abs=1e-15)
    assert GRADIENT_ONE_X1_T1 == pytest.approx(math.sqrt(2 / math.pi) * math.exp(-0.5), abs=1e-15)
    # d/dx int_0^2 [g(x - y) - g(x + y)] dy = [g(x) - g(x - 2)] - [g(x + 2) - g(x)] at x = 1
    g = lambda z: math.exp(-z * z / 0.5) / math.sqrt(0.5 * math.pi)
    assert GRADIENT_IND02_X1_T025 == pytest.approx(g(1) - g(3), abs=1e-15)


def test_halfline_kernel_dirichlet_and_mass():
    assert abs(halfline_kernel(1.0, 1.0, 1e-12)) < 1e-11
    mass, _ = integrate.quad(lambda y: halfline_kernel(1.0, 1.0, y), 0, np.inf)
    assert mass == pytest.approx(SURVIVAL_X1_T1, abs=1e-10)


@given(t=st.floats(0.01, 5), x=st.floats(0.01, 5), y=st.floats(0.01, 5), s=st.floats(0.2, 3))
def test_halfline_kernel_symmetric(t, x, y, s):
    assert halfline_kernel(t, x, y, s) == pytest.approx(halfline_kernel(t, y, x, s), abs=1e-14)


def test_interval_kernel_dirichlet_and_series_terms():
    near_a = interval_kernel(0.5, 1.0, 1e-12, 0.0, 2.0)
    near_b = interval_kernel(0.5, 1.0, 2.0 - 1e-12, 0.0, 2.0)
    assert abs(near_a.value) < 1e-11 and abs(near_b.value) < 1e-11
    assert 1 <= near_a.terms < 100


def test_interval_tends_to_halfline():
    for y in (0.3, 1.0, 2.5):
        long = interval_kernel(1.0, 1.0, y, 0.0, 50.0).value
        assert abs(long - float(halfline_kernel(1.0, 1.0, y))) < 1e-12


def test_interval_sub_markov():
    oracle = KernelOracle("interval", 0.0, 2.0)
    for t in (0.05, 0.5, 2.0):
        for x in (0.1, 1.0, 1.7):
            m = oracle.total_mass(t, x)
            assert 0.0 <= m <= 1.0


def test_semigroup_closed_forms():
    oracle = KernelOracle("halfline")
    one = lambda y: 1.0
    assert oracle.semigroup(one, 1.0, 1.0) == pytest.approx(SURVIVAL_X1_T1, abs=1e-10)
    assert oracle.gradient(one, 1.0, 1.0) == pytest.approx(GRADIENT_ONE_X1_T1, abs=1e-10)
    assert float(halfline_survival_dx(1.0, 1.0)) == pytest.approx(GRADIENT_ONE_X1_T1, abs=1e-15)
    ind = lambda y: 1.0 if 0 < y < 2 else 0.0
    assert oracle.gradient(ind, 0.25, 1.0, breaks=(2.0,)) == pytest.approx(GRADIENT_IND02_X1_T025, abs=1e-10)
    assert oracle.gradient_richardson(one, 1.0, 1.0) == pytest.approx(GRADIENT_ONE_X1_T1, abs=1e-8)


def test_sigma_scaling_of_survival():
    oracle = KernelOracle("halfline", sigma=2.0)
    assert oracle.total_mass(0.5, 1.0) == pytest.approx(float(erf(1.0 / (2.0 * math.sqrt(1.0)))), abs=1e-10)
    assert float(halfline_survival(0.5, 1.0, 2.0)) == pytest.approx(float(erf(0.5)), abs=1e-15)


def test_odd_payoff_vanishes_at_midpoint():
    oracle = KernelOracle("interval", 0.0, 2.0)
    odd = lambda y: y - 1.0
    assert abs(oracle.semigroup(odd, 0.3, 1.0)) < 1e-12


def test_pde_matches_kernel():
    sol = pde_solve_1d(0.0, 1.0, (0.0, 20.0), lambda y: np.ones_like(y), 1.0, 1e-3)
    assert sol.at(1.0) == pytest.approx(SURVIVAL_X1_T1, abs=1e-5)


def test_pde_zero_data():
    sol = pde_solve_1d(lambda y: -y, 1.0, (0.0, 3.0), lambda y: np.zeros_like(y), 0.5, 0.01)
    assert np.all(sol.u == 0.0)


def test_pde_second_order_self_convergence():
    ou = lambda y: -y
    one = lambda y: np.ones_like(y)
    vals = [pde_solve_1d(ou, 1.0, (0.0, 4.0), one, 0.4, dx, dt=dx).at(1.0) for dx in (0.04, 0.02, 0.01)]
    e1, e2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert e2 < e1 / 3  # second order: ratio near 4
    assert e2 < 10 * 0.01**2


def test_pde_rejects_bad_grids():
    with pytest.raises(ValueError):
        pde_solve_1d(0.0, 1.0, (0.0, 1.0), lambda y: np.ones_like(y), 0.5, 0.3)
    with pytest.raises(ValueError):
        pde_solve_1d(0.0, 0.0, (0.0, 1.0), lambda y: np.ones_like(y), 0.5, 0.1)


def test_kernel_oracle_validation():
    with pytest.raises(ValueError):
        KernelOracle("interval", 0.0, math.inf)
    with pytest.raises(ValueError):
        halfline_kernel(0.0, 1.0, 1.0)
