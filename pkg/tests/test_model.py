import numpy as np
import pytest
from hypothesis import given, strategies as st

from aedsim import PairRule, Species, SpeciesTable, overlap_distance
from aedsim.model import ABSENT, ModelError, ParticleStore, SimulationClock


def test_overlap_distance_examples():
    assert overlap_distance([0, 0, 0], [3, 0, 0]) == 3.0
    assert overlap_distance([0.5, 0, 0], [9.5, 0, 0], box=[10, 10, 10]) == pytest.approx(1.0)
    assert overlap_distance([1, 2, 3], [1, 2, 3]) == 0.0


coord = st.floats(-50, 50, allow_nan=False)


@given(st.lists(coord, min_size=3, max_size=3), st.lists(coord, min_size=3, max_size=3),
       st.floats(1, 20))
def test_overlap_distance_symmetric_and_bounded(a, b, side):
    box = [side] * 3
    d1 = overlap_distance(a, b, box=box)
    d2 = overlap_distance(b, a, box=box)
    assert d1 == pytest.approx(d2, abs=1e-12)
    assert d1 <= np.sqrt(3) / 2 * side + 1e-9


def test_species_table_pair_diameters():
    sp = SpeciesTable([Species("A", 1.0), Species("B", 3.0)])
    assert sp.pair_diameter[0, 1] == 2.0
    assert sp.max_pair_diameter() == 3.0
    assert sp.rule(1, 0).kind == "elastic"


def test_non_interacting_pairs_encoded_negative():
    sp = SpeciesTable([Species("S", 0.0), Species("B", 2.0)],
                      interaction=[[False, True], [True, True]])
    assert sp.pair_diameter[0, 0] < 0
    assert sp.interaction_bits[0] == 0b10


def test_asymmetric_interaction_rejected():
    with pytest.raises(ModelError):
        SpeciesTable([Species("A", 1.0), Species("B", 1.0)],
                     interaction=[[True, False], [True, True]])


def test_bad_species_rejected():
    with pytest.raises(ModelError):
        SpeciesTable([Species("A", 1.0, mass=0.0)])
    with pytest.raises(ModelError):
        SpeciesTable([Species("A", 1.0, decay_rate=-1.0)])
    with pytest.raises(ModelError):
        SpeciesTable([Species("A", 1.0)], rules={(0, 0): PairRule("explode")})


def test_rule_cutoff_overrides_contact():
    sp = SpeciesTable([Species("A", 1.0)], rules={(0, 0): PairRule("annihilate", cutoff=1.5)})
    assert sp.pair_diameter[0, 0] == 1.5
    assert sp.rule(0, 0).kind == "annihilate"


def test_store_allocates_dense_ids_and_reuses_smallest():
    st_ = ParticleStore(3, 4)
    ids = [st_.allocate() for _ in range(4)]
    assert ids == [1, 2, 3, 4]
    for i in ids:
        st_.mode[i] = 1
    assert st_.full()
    st_.release(3)
    st_.release(2)
    assert st_.mode[2] == ABSENT
    assert st_.allocate() == 2
    with pytest.raises(ModelError):
        st_.release(3)


def test_store_state_roundtrip():
    st_ = ParticleStore(2, 3)
    for _ in range(3):
        i = st_.allocate()
        st_.mode[i] = 1
        st_.pos[i] = [i, -i]
    r = ParticleStore.from_state(st_.state_dict())
    assert np.array_equal(r.pos, st_.pos) and r.alive().tolist() == [1, 2, 3]


def test_clock_rng_restore_reproduces_draws():
    c = SimulationClock(7)
    c.rng.random(10)
    s = c.save_rng_state()
    a = c.rng.random(5)
    c.restore_rng_state(s)
    assert np.array_equal(a, c.rng.random(5))


def test_clock_never_goes_back():
    c = SimulationClock()
    c.advance(1.0)
    with pytest.raises(RuntimeError):
        c.advance(0.5)
    c.advance(1.0 - 1e-14)
    assert c.t == 1.0
