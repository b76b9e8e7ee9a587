import itertools

import numpy as np
import pytest

from aedsim.spatial import BIT_B, BIT_E, CellGrid, SpatialError


def grid(box=(10, 10, 10), bounds=("periodic",) * 3, ns=1, **kw):
    kw.setdefault("ncells", 10)
    return CellGrid(np.array(box, dtype=float), list(bounds), ns, 64, **kw)


def test_locate_cell_examples():
    g = grid()
    assert g.cell_coords(g.locate_cell([2.5, 0.5, 0.1])) == (2, 0, 0)
    assert g.cell_coords(g.locate_cell([3.0, 0.5, 0.5])) == (3, 0, 0)
    assert g.cell_coords(g.locate_cell([9.9999999, 0.5, 0.5]))[0] == 9
    with pytest.raises(SpatialError):
        g.locate_cell([np.nan, 0, 0])


def test_neighbor_counts():
    assert len(set(grid().neighbor_cells(555))) == 27
    g = grid(bounds=("wall",) * 3)
    assert len(g.neighbor_cells(0)) == 8
    g2 = CellGrid(np.array([5.0, 5.0]), ["periodic"] * 2, 1, 8, ncells=5)
    assert all(len(set(g2.neighbor_cells(c))) == 9 for c in range(g2.n_cells))


def test_small_periodic_axis_is_deduplicated():
    g = grid(box=(4, 4, 4), ncells=2)
    for c in range(g.n_cells):
        nb = g.neighbor_cells(c)
        assert len(nb) == len(set(nb)) == 8


def test_wrap_translates_by_box():
    g = grid()
    w, im = g.wrap(np.array([10.5, -0.25, 3.0]))
    assert np.allclose(w, [0.5, 9.75, 3.0]) and im.tolist() == [1, -1, 0]


def test_insert_transfer_counts_and_bits():
    g = grid(ns=2)
    cell = np.full(65, -1, dtype=np.int64)
    a, b = 0, 1
    g.insert(1, a, 1, cell)
    assert g.count[a, 1] == 1 and g.mask[a] & 0b10
    g.transfer_particle(1, b, 1, cell)
    assert g.count[a].sum() == 0 and g.count[b, 1] == 1 and g.mask[b] & 0b10
    assert g.members(b) == [1]


def test_random_transfers_match_recount():
    rng = np.random.default_rng(0)
    g = grid()
    n = 60
    cell = np.full(65, -1, dtype=np.int64)
    species = np.zeros(65, dtype=np.int64)
    pos = rng.random((n + 1, 3)) * 10
    for i in range(1, n + 1):
        g.insert(i, g.locate_cell(pos[i]), 0, cell)
    for _ in range(10_000):
        i = int(rng.integers(1, n + 1))
        pos[i] = rng.random(3) * 10
        g.transfer_particle(i, g.locate_cell(pos[i]), 0, cell)
    ids = np.arange(1, n + 1)
    g.check(pos[ids], cell, ids, species)
    recount = np.bincount(g.locate_many(pos[ids]), minlength=g.n_cells)
    assert np.array_equal(recount, g.occupancy())


def test_mask_skip_and_stale_bits():
    g = grid(ns=2)
    cell = np.full(65, -1, dtype=np.int64)
    g.insert(1, 0, 0, cell)
    g.mask_refresh()
    delta_bits = np.uint64(0)  # species 0 interacts with nothing
    assert g.mask_skip(0, delta_bits)
    assert not g.mask_skip(0, np.uint64(0b01))
    g.remove(1, 0, cell)
    # stale bit still set: conservative, no skip
    assert not g.mask_skip(0, np.uint64(0b01))
    g.mask_refresh()
    assert g.mask_skip(0, np.uint64(0b01))
    m = g.mask.copy()
    g.mask_refresh()
    assert np.array_equal(m, g.mask)


def test_mask_refresh_rejected_mid_event():
    g = grid()
    g.in_event = True
    with pytest.raises(SpatialError):
        g.mask_refresh()


def test_periodic_has_no_boundary_or_external():
    g = grid()
    assert not g.flags(BIT_B).any() and not g.flags(BIT_E).any()


def _layers(g):
    coords = g.coords
    sim = ((coords >= g.sim_lo) & (coords < g.sim_hi)).all(axis=1)
    din = np.min(np.minimum(coords - g.sim_lo, g.sim_hi - 1 - coords), axis=1)
    dout = np.max(np.maximum(g.sim_lo - coords, coords - (g.sim_hi - 1)), axis=1)
    return sim, din, dout


def test_open_partition_layout():
    g = grid(bounds=("open",) * 3, w_bi=1, w_be=1)
    b, e = g.flags(BIT_B), g.flags(BIT_E)
    sim, din, dout = _layers(g)
    assert np.array_equal(b & ~e, sim & (din == 0))
    assert np.array_equal(b & e, ~sim & (dout == 1))
    assert np.array_equal(e, ~sim)
    assert (sim & ~b).sum() == 8 ** 3


def test_boundary_band_width_two():
    g = grid(bounds=("open",) * 3, w_bi=2, w_be=1)
    b, e = g.flags(BIT_B), g.flags(BIT_E)
    assert (b & ~e).sum() == 10 ** 3 - 6 ** 3
    g.partition_domain()
    assert (g.flags(BIT_B) == b).all()


def test_bad_widths():
    with pytest.raises(SpatialError):
        grid(w_bi=0)
    with pytest.raises(SpatialError):
        grid().partition_domain(w_bi=0)


def test_no_insert_into_purely_external_cell():
    g = grid(bounds=("open",) * 3)
    cell = np.full(65, -1, dtype=np.int64)
    corner = 0
    assert g.mask[corner] & BIT_E and not g.mask[corner] & BIT_B
    with pytest.raises(SpatialError):
        g.insert(1, corner, 0, cell)


def test_mixed_faces():
    g = CellGrid(np.array([10.0, 6.0]), ["periodic", ("thermal", "thermal")], 1, 8, ncells=(5, 3))
    assert g.periodic.tolist() == [True, False]
    with pytest.raises(SpatialError):
        CellGrid(np.array([10.0, 6.0]), [("periodic", "wall"), "wall"], 1, 8, ncells=2)
