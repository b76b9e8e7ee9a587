import math

import numpy as np
import pytest
from scipy import integrate, stats

from aedsim.fpkmc import (CubeSampler, exit_density, free_greens, position_cdf, position_density,
                          sample_exit_time, sample_position, survival)
from aedsim.fpkmc.propagators import CROSSOVER

from oracles import interval_walk_exit_times, interval_walk_survivors


def survival_eigen(s, terms=400):
    k = np.arange(terms)
    n = 2 * k + 1
    return float(np.sum(4 / (np.pi * n) * (-1.0) ** k * np.exp(-n**2 * np.pi**2 * s / 4)))


@pytest.mark.parametrize("s", [0.02, 0.1, 0.19, 0.2, 0.21, 0.5, 1.0, 3.0])
def test_survival_matches_independent_eigen_series(s):
    assert survival(s) == pytest.approx(survival_eigen(s), abs=1e-11)


def test_survival_limits_and_monotone():
    assert survival(0.0) == 1.0 and survival(-1.0) == 1.0
    s = np.linspace(1e-4, 4, 400)
    v = np.array([survival(x) for x in s])
    assert (np.diff(v) < 0).all() and v[-1] > 0


@pytest.mark.parametrize("s", [0.05, 0.15, CROSSOVER, 0.25, 1.0])
def test_exit_density_is_minus_survival_derivative(s):
    h = 1e-6
    assert exit_density(s) == pytest.approx((survival(s - h) - survival(s + h)) / (2 * h), rel=1e-5)


@pytest.mark.parametrize("s", [0.03, 0.19, 0.21, 1.0])
def test_position_density_integrates_to_survival(s):
    total, _ = integrate.quad(lambda x: position_density(x, s), -1, 1, limit=200)
    assert total == pytest.approx(survival(s), rel=1e-8)
    part, _ = integrate.quad(lambda x: position_density(x, s), -1, 0.3, limit=200)
    assert position_cdf(0.3, s) == pytest.approx(part, rel=1e-7)


def test_free_greens_normalised():
    x = np.linspace(-10, 10, 1001)
    X, Y = np.meshgrid(x, x)
    g = free_greens(np.stack([X, Y], -1), 0.7, 1.3, 2)
    assert np.trapezoid(np.trapezoid(g, x), x) == pytest.approx(1.0, rel=1e-6)


def test_zero_elapsed_no_passage_is_identity():
    assert sample_position(0.3, 1.0, 1.0, 0.0) == 0.0
    assert sample_exit_time(0.3, 1.0, 0.0) == np.inf


def test_mean_exit_time_matches_analytic_and_walk_oracle():
    a, D = 1.0, 0.5
    u = np.random.default_rng(0).random(10_000)
    t = np.array([sample_exit_time(x, a, D) for x in u])
    assert t.mean() == pytest.approx(a * a / (2 * D), rel=0.02)
    ref = interval_walk_exit_times(10_000, a, D, 1e-4, 1)
    assert t.mean() == pytest.approx(ref.mean(), rel=0.02)


def test_short_time_no_passage_is_nearly_free():
    a, D, dt = 1.0, 1.0, 0.005
    u = np.random.default_rng(1).random(50_000)
    x = np.array([sample_position(v, a, D, dt) for v in u])
    assert x.var() == pytest.approx(2 * D * dt, rel=0.02)
    assert np.abs(x).max() < a


def test_no_passage_matches_conditioned_walk_oracle():
    a, D, dt = 1.0, 1.0, 0.3
    ref = interval_walk_survivors(17_000, a, D, dt, 2e-5, 3)
    assert len(ref) > 9_000
    u = np.random.default_rng(2).random(10_000)
    x = np.array([sample_position(v, a, D, dt) for v in u])
    assert stats.ks_2samp(x, ref).statistic < 0.05
    # also against the exact conditional CDF
    norm = survival(D * dt)
    cdf = lambda y: np.array([position_cdf(v, D * dt) / norm for v in np.atleast_1d(y)])
    assert stats.kstest(x, cdf).pvalue > 0.01


def test_exit_side_and_axis_are_symmetric():
    s = CubeSampler(np.random.default_rng(5))
    n = 30_000
    draws = [s.first_passage(1.0, 1.0, 3) for _ in range(n)]
    axis = np.bincount([d[1] for d in draws], minlength=3) / n
    side = np.mean([d[2] for d in draws])
    assert np.all(np.abs(axis - 1 / 3) < 3 * np.sqrt(2 / 9 / n))
    assert abs(side - 0.5) < 3 * np.sqrt(0.25 / n)


def test_exit_point_lies_on_the_wall():
    s = CubeSampler(np.random.default_rng(6))
    t, ax, side = s.first_passage(0.5, 2.0, 3)
    p = s.exit_point(0.5, 2.0, t, 3, ax, side)
    assert p[ax] == (0.5 if side else -0.5)
    assert (np.abs(np.delete(p, ax)) < 0.5).all()
