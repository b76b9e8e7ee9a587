import numpy as np
import pytest

from aedsim import PairRule, Simulation, Species, SpeciesTable
from aedsim.fpkmc import (FPKMCError, FpkmcParams, WalkStream, species_hop_rates, td_cluster_hop,
                          walk)
from aedsim.fpkmc.backend import CLUSTER, NONE, PAIR, SINGLE
from aedsim.fpkmc.pair import WALK_INNER, WALK_OUTER


def fp_sim(species, box=(12.0, 12.0, 12.0), seed=0, **kw):
    return Simulation(species, list(box), ["periodic"] * len(box), backend="fpkmc", seed=seed, **kw)


def lone(seed=0, D=1.0):
    sp = SpeciesTable([Species("A", 1.0, diffusion=D)])
    sim = fp_sim(sp, seed=seed)
    sim.add_particle([6, 6, 6], 0)
    return sim


def test_params_validation():
    with pytest.raises(ValueError):
        FpkmcParams(mu_p=1.0)
    with pytest.raises(ValueError):
        FpkmcParams(h_hop=0)
    with pytest.raises(ValueError):
        FpkmcParams(h_cluster=0)


def test_walls_are_rejected():
    sp = SpeciesTable([Species("A", 1.0, diffusion=1.0)])
    with pytest.raises(FPKMCError):
        Simulation(sp, [12, 12, 12], ["wall", "periodic", "periodic"], backend="fpkmc")


def test_isolated_particle_gets_capped_cube():
    sim = lone()
    sim.run(max_events=1)
    b = sim.backend
    assert b.kind[1] == SINGLE
    c, h = b.region(1)
    assert h == pytest.approx(b.params.mu_p_max * 0.5)
    assert np.isfinite(sim.queue.record(1).time)


def test_lone_particle_msd():
    n, T = 300, 4.0
    disp = []
    for seed in range(n):
        sim = lone(seed)
        sim.run(t_max=T)
        sim.synchronize_all(T)
        disp.append(sim.current_positions([1])[0] - 6.0)
    msd = np.mean(np.sum(np.array(disp) ** 2, axis=1))
    # the mean of the squared displacement over n samples has ~sqrt(2/(3n)) relative spread
    assert msd == pytest.approx(6 * T, rel=4 * np.sqrt(2 / (3 * n)))


def test_walk_at_contact_collides_immediately():
    st = WalkStream(3, seed=1).saved
    status, hops, r = walk([1.0, 0, 0], 0.05, 1.0, 1.5, False, st, 100)
    assert (status, hops) == (WALK_INNER, 0)


def test_walk_splitting_matches_radial_harmonic_oracle():
    r_in, b, r0 = 1.0, 1.5, 1.2
    n = 3000
    inner = 0
    for k in range(n):
        st = WalkStream(3, seed=k).saved
        status, _, _ = walk([r0, 0, 0], 0.025, r_in, b, False, st, 10**6)
        inner += status == WALK_INNER
    p = (1 / r0 - 1 / b) / (1 / r_in - 1 / b)
    assert abs(inner / n - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_walk_replay_is_bitwise():
    st = WalkStream(3, seed=42).saved
    s1, k1, r1 = walk([1.2, 0.1, 0], 0.05, 1.0, 1.5, False, st, 10**6)
    s2, k2, r2 = walk([1.2, 0.1, 0], 0.05, 1.0, 1.5, False, st, 10**6)
    assert (s1, k1) == (s2, k2) and np.array_equal(r1, r2)
    s3, k3, r3 = walk([1.2, 0.1, 0], 0.05, 1.0, 1.5, False, st, 10**6, stop_after=k1 // 2)
    assert k3 == k1 // 2


def close_pair(seed=0, rule=None, D=(1.0, 1.0), sep=1.05):
    rules = {} if rule is None else {(0, 0): PairRule(rule)}
    sp = SpeciesTable([Species("A", 1.0, diffusion=D[0]), Species("B", 1.0, diffusion=D[1])],
                      rules=rules if rule is None else {(0, 1): PairRule(rule)})
    sim = fp_sim(sp, seed=seed)
    sim.add_particle([6.0, 6, 6], 0)
    sim.add_particle([6.0 + sep, 6, 6], 1)
    return sim


def test_close_pair_gets_pair_protection_with_symmetric_schedule():
    sim = close_pair()
    sim.run(max_events=1)
    b, q = sim.backend, sim.queue
    assert b.kind[1] == PAIR and b.kind[2] == PAIR
    assert q.ev_p[1] == 2 and q.ev_p[2] == 1 and q.ev_t[1] == q.ev_t[2]
    assert sim.check_schedule_symmetry() == 0
    assert b.check_disjoint() == 0


def test_pair_cancellation_replays_the_walk():
    sim = close_pair(3)
    sim.run(max_events=1)
    pp = sim.backend.pair_of[1]
    end = pp.walk_end.copy()
    st, k, r = pp.replay(pp.walk_hops, sim.backend.params.max_hops)
    assert k == pp.walk_hops and np.array_equal(r, end) and st == pp.walk_status


def test_annihilation_removes_both():
    sim = close_pair(rule="annihilate")
    sim.run(t_max=50.0)
    assert sim.store.n_alive == 0
    c = sim.backend.counters()
    assert c["reactions"] == 1 and c["deaths"] == 2


def test_coalescence_equal_diffusion_midpoint():
    sp = SpeciesTable([Species("A", 1.0, diffusion=1.0), Species("C", 1.0, diffusion=0.5)],
                      rules={(0, 0): PairRule("coalesce", products=(1,))})
    sim = fp_sim(sp)
    sim.add_particle([5.0, 6, 6], 0)
    sim.add_particle([6.0, 6, 6], 0)
    out = sim.backend.process_reaction(1, 2, 0.0)
    assert out == [1] and sim.store.n_alive == 1
    assert np.allclose(sim.store.pos[1], [5.5, 6, 6]) and sim.store.species[1] == 1


def test_decay_changes_species_in_place():
    sp = SpeciesTable([Species("A", 1.0, diffusion=0.0, decay_rate=1.0, decay_products=(1,)),
                       Species("B", 1.0, diffusion=0.0)])
    sim = fp_sim(sp)
    sim.add_particle([6.0, 6, 6], 0)
    sim.run(t_max=100.0)
    assert sim.store.species[1] == 1 and np.allclose(sim.store.pos[1], 6.0)
    assert sim.backend.counters()["decays"] == 1


def test_birth_times_and_species_frequencies():
    sp = SpeciesTable([Species("A", 0.2, birth_rate=2.0, decay_rate=20.0),
                       Species("B", 0.2, birth_rate=1.0, decay_rate=20.0)],
                      interaction=[[False, False], [False, False]])
    sim = fp_sim(sp, seed=1)
    n = 0
    counts = np.zeros(2)
    times = []
    while n < 10_000:
        e = sim.step()
        if e.particle == 0:
            n += 1
            times.append(e.time)
            counts += np.bincount(sim.store.species[sim.store.alive()[-1:]], minlength=2) \
                if sim.store.n_alive else 0
    dt = np.diff(times)
    assert dt.mean() == pytest.approx(1 / 3, rel=0.02)
    c = sim.backend.counters()
    assert c["births"] == 10_000
    # every birth is followed by its own decay, so the newest particle is the newborn
    frac = counts[0] / counts.sum()
    assert abs(frac - 2 / 3) < 3 * np.sqrt(2 / 9 / counts.sum())


def test_newborn_overlap_dispatches_reaction():
    sp = SpeciesTable([Species("A", 1.0, diffusion=1.0)], rules={(0, 0): PairRule("annihilate")})
    sim = fp_sim(sp)
    sim.add_particle([6.0, 6, 6], 0)
    sim.run(max_events=1)
    sim.add_particle([6.5, 6, 6], 0)
    sim.run(max_events=3)
    assert sim.store.n_alive == 0 and sim.backend.counters()["overlaps"] >= 1


def test_reacting_gas_disjoint_and_count_ledger():
    rng = np.random.default_rng(7)
    sp = SpeciesTable([Species("A", 1.0, diffusion=1.0, birth_rate=0.5),
                       Species("B", 1.0, diffusion=0.5)],
                      rules={(0, 0): PairRule("coalesce", products=(1,)),
                             (0, 1): PairRule("annihilate")})
    sim = fp_sim(sp, seed=7, check_every=100)
    pts = (np.array(np.meshgrid(*[np.arange(4)] * 3)).reshape(3, -1).T + 0.5) * 3.0
    sim.add_particles(pts, rng.integers(2, size=len(pts)))
    n0 = sim.store.n_alive
    for _ in range(20):
        sim.run(max_events=200)
        assert sim.backend.check_disjoint() == 0
        assert sim.check_schedule_symmetry() == 0
    c = sim.backend.counters()
    assert c["reactions"] > 0
    assert n0 + c["births"] - c["deaths"] == sim.store.n_alive
    assert sim.violations["disjointness"] == 0


def test_hop_rates_ignore_species_population():
    assert species_hop_rates([1.0, 0.25], [0.1, 0.1]).tolist() == pytest.approx([200.0, 50.0])


def test_cluster_hop_counts_track_diffusion_ratio():
    rng = np.random.default_rng(0)
    pos = np.zeros((4, 3))
    _, counts = td_cluster_hop(rng, pos, np.array([0, 0, 1, 1]), [1.0, 0.25], [0.1, 0.1], 0.0, 200.0)
    n = counts.sum()
    # rates 200 : 50, so a fraction 0.8 of the hops move species 0
    assert abs(counts[0] / n - 0.8) < 3 * np.sqrt(0.8 * 0.2 / n)


def test_cluster_never_passes_until_and_msd():
    rng = np.random.default_rng(1)
    pos = np.zeros((400, 3))
    seen = []
    t, counts = td_cluster_hop(rng, pos, np.zeros(400, dtype=int), [0.5], [0.1], 0.0, 10.0,
                               on_hop=lambda s, ids: seen.append(1))
    assert t == 10.0 and counts[0] == len(seen)
    msd = (pos ** 2).sum(1).mean()
    assert msd == pytest.approx(6 * 0.5 * 10.0, rel=0.05)


def jammed_square(seed=3, sep=1.05):
    sp = SpeciesTable([Species("A", 1.0, diffusion=1.0)])
    sim = fp_sim(sp, seed=seed)
    pts = [[6, 6, 6], [6 + sep, 6, 6], [6, 6 + sep, 6], [6 + sep, 6 + sep, 6]]
    sim.add_particles(np.array(pts, float), [0] * 4)
    sim.step()
    return sim


def test_jammed_square_hops_as_a_cluster():
    sim = jammed_square()
    b = sim.backend
    assert (b.kind[1:5] == CLUSTER).all()
    cp = b.cluster_of[1]
    assert sorted(cp.members) == [1, 2, 3, 4]
    assert b.check_disjoint() == 0 and sim.check_schedule_symmetry() == 0
    # every member stays inside its own cube and outside every other core
    assert (np.abs(cp.end_pos - cp.start) <= cp.half[:, None] + 1e-12).all()
    d = np.linalg.norm(cp.end_pos[:, None] - cp.end_pos[None], axis=2)
    assert d[np.triu_indices(4, 1)].min() >= 1.0
    sim.run(max_events=500)
    c = b.counters()
    assert c["overlaps"] == 0 and c["degenerate"] == 0
    assert b.check_disjoint() == 0 and sim.check_schedule_symmetry() == 0
    assert sim.t > cp.t_end


def test_cluster_interruption_replays_the_hops():
    sim = jammed_square()
    b = sim.backend
    cp = b.cluster_of[1]
    mid = 0.5 * (cp.t0 + cp.t_end)
    first = b._cluster_run(cp, mid)[1]
    assert np.array_equal(first, b._cluster_run(cp, mid)[1])
    assert np.array_equal(b._cluster_run(cp, cp.until)[1], cp.end_pos)
    b.propagate(1, mid)
    assert (b.kind[1:5] == NONE).all() and not b.cluster_of
    assert all(m not in sim.queue for m in cp.members)
    assert np.array_equal(sim.store.pos[list(cp.members)], first)
