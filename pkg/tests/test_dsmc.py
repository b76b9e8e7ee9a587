import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from aedsim import Simulation, Species, SpeciesTable
from aedsim.dsmc import (DsmcParams, cell_acceptance, collision_prefactor,
                         next_stochastic_collision_time, process_stochastic_collision,
                         random_direction, scatter, select_cells_rejection,
                         select_pair_rejection)
from aedsim.spatial import BIT_B, BIT_E, BIT_ED


class FixedRng:
    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


def test_waiting_time_inverse_cdf():
    assert next_stochastic_collision_time(FixedRng(0.5), 0.0, 2.0) == pytest.approx(0.34657, abs=1e-5)
    assert next_stochastic_collision_time(FixedRng(0.5), 1.0, 0.0) == np.inf


@pytest.mark.parametrize("rate", [1.0, 2.0])
def test_waiting_time_mean(rate):
    rng = np.random.default_rng(0)
    dt = np.array([next_stochastic_collision_time(rng, 0.0, rate) for _ in range(100_000)])
    assert dt.mean() == pytest.approx(1 / rate, rel=0.01)


def test_cell_acceptance_examples():
    assert cell_acceptance(3, 4) == pytest.approx(0.5)
    assert cell_acceptance(1, 4) == 0 and cell_acceptance(0, 4) == 0
    assert cell_acceptance(4, 4) == 1


def test_cell_selection_frequency_chi_square():
    rng = np.random.default_rng(1)
    counts = np.array([0, 1, 2, 3, 4, 5, 7, 2, 3])
    sel = select_cells_rejection(rng, counts, counts.max(), 1_000_000)
    obs = np.bincount(sel, minlength=len(counts))
    w = counts * (counts - 1.0)
    assert obs[w == 0].sum() == 0
    k = w > 0
    exp = w[k] / w.sum() * obs.sum()
    assert stats.chisquare(obs[k], exp).pvalue > 0.01


@pytest.mark.parametrize("speed, p", [(2.0, 1.0), (0.0, 0.0), (0.6, 0.3)])
def test_pair_acceptance_frequency(speed, p):
    rng = np.random.default_rng(2)
    vel = np.array([[0, 0, 0], [speed, 0, 0], [0, 0, 0]], dtype=float)
    n = 20_000
    acc = sum(select_pair_rejection(rng, [1, 2], vel, 2.0)[2] for _ in range(n))
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs(acc / n - p) <= 3 * sigma + 1e-12


def test_pair_bound_violation_accepts():
    vel = np.array([[0, 0], [5, 0], [0, 0]], dtype=float)
    i, j, ok, viol = select_pair_rejection(np.random.default_rng(0), [1, 2], vel, 1.0)
    assert ok and viol and {i, j} == {1, 2}


settings_ = settings(max_examples=200, deadline=None)
vec = st.lists(st.floats(-5, 5), min_size=3, max_size=3)


@settings_
@given(vec, vec, st.floats(0.1, 10), st.floats(0.1, 10), st.integers(0, 2**32 - 1))
def test_scatter_conserves_momentum_and_energy(vi, vj, mi, mj, seed):
    vi, vj = np.array(vi), np.array(vj)
    n = random_direction(np.random.default_rng(seed), 3)
    a, b = scatter(vi, vj, mi, mj, n)
    assert np.allclose(mi * a + mj * b, mi * vi + mj * vj, atol=1e-12 * (1 + np.abs(mi * vi).max() + np.abs(mj * vj).max()))
    e0 = mi * vi @ vi + mj * vj @ vj
    assert mi * a @ a + mj * b @ b == pytest.approx(e0, rel=1e-12, abs=1e-12)
    assert np.linalg.norm(a - b) == pytest.approx(np.linalg.norm(vi - vj), rel=1e-12, abs=1e-12)


def test_self_collision_rejected():
    vel = np.zeros((3, 3))
    with pytest.raises(ValueError):
        process_stochastic_collision(np.random.default_rng(0), vel, np.ones(3), 1, 1)


@pytest.mark.parametrize("dim", [2, 3])
def test_post_collision_direction_isotropic(dim):
    rng = np.random.default_rng(3)
    n = np.array([random_direction(rng, dim) for _ in range(100_000)])
    assert np.allclose(np.linalg.norm(n, axis=1), 1)
    assert (np.abs(n.mean(0)) < 3 * n.std(0) / np.sqrt(len(n))).all()


def test_prefactor_formula():
    assert collision_prefactor(3, 1.0, 2.0, 8.0) == pytest.approx(np.pi * 2 / 16)


def test_params_validation():
    with pytest.raises(ValueError):
        DsmcParams(dt=0)
    with pytest.raises(ValueError):
        DsmcParams(collision_mode="bogus")


def _solvent(n=2000, side=10.0, seed=0, bead=True, v_rel_max=8.0, **kw):
    rng = np.random.default_rng(seed)
    sp = SpeciesTable([Species("S", 0.0), Species("B", 1.5, mass=4.0)],
                      interaction=[[False, True], [True, True]])
    kw.setdefault("dt", 0.05)
    p = DsmcParams(species=0, cross_section_diameter=0.5, v_rel_max=v_rel_max, **kw)
    sim = Simulation(sp, [side] * 3, ["periodic"] * 3, backend="sedmd", seed=seed, dsmc=p,
                     ncells=5, capacity=n + 8, check_every=200)
    if bead:
        sim.add_particle([5.0, 5.0, 5.0], 1, [0.2, 0.0, 0.0])
    x = rng.random((n, 3)) * side
    if bead:
        x = x[np.linalg.norm(x - 5.0, axis=1) > 0.8]
    sim.add_particles(x, 0, rng.normal(size=(len(x), 3)))
    return sim


def test_single_bead_marks_its_shell_event_driven():
    sim = _solvent(500)
    sim.start()
    ed = (sim.grid.mask & BIT_ED) != 0
    assert ed.sum() == 27
    assert sim.backend.check_classification() == 0


def test_pure_gas_has_no_event_driven_cells():
    sim = _solvent(500, bead=False)
    sim.start()
    assert not ((sim.grid.mask & BIT_ED) != 0).any()
    assert len(sim.queue) == 0


def _momentum_energy(sim):
    ids = sim.store.alive()
    m = sim.species.mass[sim.store.species[ids]]
    v = sim.store.vel[ids]
    return (m[:, None] * v).sum(0), 0.5 * (m * (v ** 2).sum(1)).sum()


@pytest.mark.parametrize("mode", ["event", "step"])
def test_hybrid_conserves_particles_momentum_energy(mode):
    sim = _solvent(1500, collision_mode=mode, refresh_every=5)
    n0 = sim.store.n_alive
    p0, e0 = _momentum_energy(sim)
    sim.run(t_max=2.0)
    p1, e1 = _momentum_energy(sim)
    c = sim.backend.counters()
    assert sim.store.n_alive == n0
    assert c["dsmc_collisions"] > 100 and c["collisions"] > 0
    assert np.allclose(p0, p1, atol=1e-10 * np.sqrt(2 * e0))
    assert e1 == pytest.approx(e0, rel=1e-10)
    assert c["dsmc_count_failures"] == 0 and c["dsmc_classify_failures"] == 0
    assert c["faults"] == 0 and c["deep_overlaps"] == 0
    assert sim.check_invariants() == 0
    assert sim.violations == {"symmetry": 0, "disjointness": 0, "cells": 0, "overlap": 0}


def test_no_deterministic_solvent_solvent_events():
    sim = _solvent(1500, refresh_every=5)
    sim.run(t_max=2.0)
    t, i, p, nu = sim.log.arrays()
    pair = (i > 0) & (p >= 1) & (p < 2**62) & (p != i)
    sp = sim.store.species
    both = (sp[i[pair]] == 0) & (sp[p[pair]] == 0)
    # ids can be reused only through removal, which a periodic box never does
    assert pair.sum() > 0 and both.sum() == 0


def test_step_collision_rate_matches_kinetic_theory():
    n, side, steps = 2000, 10.0, 200
    sim = _solvent(n, bead=False, collision_mode="step", dt=0.02, v_rel_max=12.0)
    sim.run(t_max=steps * 0.02 + 1e-9)
    c = sim.backend.counters()
    assert c["dsmc_vrel_violations"] == 0 and sim.backend.steps == steps
    cells = sim.grid.n_cells
    lam = sim.backend.lam0() * 0.02
    # independent uniform particles: E[N_L (N_L - 1)] = N (N - 1) / C^2
    expected = steps * lam * n * (n - 1) / cells
    assert c["dsmc_candidates"] == pytest.approx(expected, rel=4 / np.sqrt(expected) + 0.01)


def test_pure_dsmc_relaxes_to_maxwell_boltzmann():
    rng = np.random.default_rng(4)
    sp = SpeciesTable([Species("S", 0.0)], interaction=[[False]])
    p = DsmcParams(species=0, dt=0.05, cross_section_diameter=1.0, v_rel_max=6.0,
                   collision_mode="step")
    sim = Simulation(sp, [10.0] * 3, ["periodic"] * 3, backend="sedmd", seed=4, dsmc=p,
                     ncells=5, capacity=1000)
    # start far from equilibrium: unit speeds along random axes
    v = np.zeros((1000, 3))
    v[np.arange(1000), rng.integers(3, size=1000)] = rng.choice([-1.0, 1.0], 1000) * np.sqrt(3)
    v -= v.mean(0)
    sim.add_particles(rng.random((1000, 3)) * 10, 0, v)
    while sim.backend.counters()["dsmc_collisions"] < 100_000:
        sim.run(t_max=sim.t + 1.0)
    u = sim.store.vel[sim.store.alive()].ravel()
    assert u.var() == pytest.approx(1.0, rel=0.02)
    assert stats.kstest(u / u.std(), "norm").pvalue > 0.01


def _open_gas(density, seed=0):
    rng = np.random.default_rng(seed)
    sp = SpeciesTable([Species("S", 0.0)], interaction=[[False]])
    p = DsmcParams(species=0, dt=0.05, cross_section_diameter=0.5, v_rel_max=8.0,
                   reservoir_density=density, collision_mode="step")
    sim = Simulation(sp, [8.0] * 3, ["open", "periodic", "periodic"], backend="sedmd",
                     seed=seed, dsmc=p, ncells=(4, 4, 4), capacity=2048)
    n = rng.poisson(density * 8.0 ** 3)
    sim.add_particles(rng.random((n, 3)) * 8.0, 0, rng.normal(size=(n, 3)))
    return sim


def test_reservoir_zero_density_inserts_nothing():
    sim = _open_gas(0.0)
    sim.run(t_max=1.0)
    assert sim.backend.counters()["dsmc_reservoir_trials"] == 0
    assert sim.store.n_alive == 0


def test_reservoir_trial_count_and_stationary_population():
    rho = 1.0
    sim = _open_gas(rho)
    g = sim.grid
    ghost = int((((g.mask & BIT_E) != 0) & ((g.mask & BIT_B) != 0)).sum())
    counts = []
    steps = 400
    for k in range(steps):
        sim.run(t_max=(k + 1) * 0.05)
        counts.append(sim.store.n_alive)
    trials = sim.backend.counters()["dsmc_reservoir_trials"]
    mean = steps * rho * g.cell_volume() * ghost
    assert abs(trials - mean) < 3 * np.sqrt(mean)
    late = np.array(counts[steps // 2:])
    assert late.mean() == pytest.approx(rho * 8.0 ** 3, rel=0.05)
