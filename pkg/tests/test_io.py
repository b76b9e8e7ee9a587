import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aedsim import Simulation
from aedsim.io.cli import execute, main, setup_logging
from aedsim.io.config import (ConfigError, OutputConfig, PlacementConfig, RunConfig, SimConfig,
                              SpeciesConfig, build_simulation, parse_config, render)
from aedsim.io.records import (CellAverager, EventWriter, RecordError, read_averages, read_events,
                               read_snapshot, slab_profile, write_snapshot)

GAS = """
[simulation]
box = [8.0, 8.0, 8.0]
seed = 3

[[species]]
name = "A"
diameter = 1.0

[[particles]]
species = "A"
count = 40
kT = 1.0

[run]
max_events = 2000
"""


def diag_text(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value.diagnostics


def test_defaults():
    c = parse_config(GAS)
    assert c.backend == "edmd" and c.mu == 1.3 and c.w_bi == 1 and c.w_be == 1
    assert c.boundary_list() == ["periodic"] * 3
    assert c.species[0].mass == 1.0 and c.species[0].diffusion == 0.0
    assert c.output.event_log and c.output.snapshot_every == 0
    assert c.particles[0].placement == "random"


def test_asymmetric_interaction_matrix_is_rejected():
    text = GAS.replace("[[particles]]", """[[species]]
name = "B"
diameter = 1.0

[interactions]
matrix = [[true, false], [true, true]]

[[particles]]""")
    d = diag_text(text)
    assert any("symmetric" in x.message for x in d)
    line = text.splitlines().index("matrix = [[true, false], [true, true]]") + 1
    assert any(x.line == line for x in d)


def test_cell_size_below_reach_is_rejected():
    text = GAS.replace("seed = 3", "seed = 3\ncell_size = 0.5")
    line = text.splitlines().index("cell_size = 0.5") + 1
    assert any("cell size" in x.message and x.line == line for x in diag_text(text))


def test_unknown_keys_report_their_lines():
    text = GAS.replace("kT = 1.0", "kT = 1.0\ncolour = \"red\"")
    d = diag_text(text)
    line = text.splitlines().index('colour = "red"') + 1
    assert [(x.line, "unknown key" in x.message) for x in d] == [(line, True)]
    d = diag_text(GAS + "\n[extras]\nx = 1\n")
    assert any("unknown section 'extras'" in x.message for x in d)


def test_missing_required_and_bad_types():
    d = diag_text("[simulation]\nbackend = \"edmd\"\n[[species]]\nname = \"A\"\ndiameter = \"big\"\n")
    msgs = " ".join(x.message for x in d)
    assert "box" in msgs and "bad value" in msgs


def test_backend_specific_sections():
    d = diag_text(GAS + "\n[fpkmc]\nmu_p = 2.0\n")
    assert any("only used by the fpkmc backend" in x.message for x in d)
    d = diag_text(GAS.replace("seed = 3", "seed = 3\nbackend = \"fpkmc\"") + "\n[fpkmc]\nmu_p = 0.5\n")
    assert any("mu_p" in x.message for x in d)


def test_syntax_errors_have_lines():
    d = diag_text("[simulation]\nbox = = 2\nseed = 1\n")
    assert d[0].line == 2 and "syntax" in d[0].message
    assert diag_text("[simulation]\nbox = [1, 2\n")[0].line == 2


def test_render_roundtrip_of_a_full_config():
    text = GAS.replace("seed = 3", 'seed = 3\nboundaries = ["periodic", ["thermal", "wall"], "periodic"]'
                       '\nuse_nnl = true\ncheck_every = 100')
    text += '\n[output]\nsnapshot_every = 500\naverages_every = 0.5\n'
    c = parse_config(text)
    assert parse_config(render(c)) == c


names = st.text("ABCDEFGH", min_size=1, max_size=3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(names, st.floats(0.1, 2.0), st.floats(0.5, 4.0), st.floats(0, 2.0)),
                min_size=1, max_size=3, unique_by=lambda x: x[0]),
       st.integers(0, 2**31), st.sampled_from(["edmd", "fpkmc"]),
       st.one_of(st.none(), st.floats(0.1, 100.0)), st.integers(1, 10**6))
def test_parse_of_render_is_identity(species, seed, backend, t_max, max_events):
    sp = tuple(SpeciesConfig(n, d, m, dif) for n, d, m, dif in species)
    c = SimConfig(box=(30.0, 30.0, 30.0), species=sp, backend=backend, seed=seed,
                  particles=(PlacementConfig(sp[0].name, count=2),),
                  run=RunConfig(t_max=t_max, max_events=max_events),
                  output=OutputConfig(averages_every=0.25))
    assert parse_config(render(c)) == c


def test_build_simulation_places_without_overlap():
    c = parse_config(GAS)
    sim = build_simulation(c)
    assert sim.store.n_alive == 40
    x = sim.current_positions()
    d = x[:, None] - x[None]
    d -= 8.0 * np.rint(d / 8.0)
    r = np.linalg.norm(d, axis=2)
    assert r[np.triu_indices(40, 1)].min() >= 1.0
    v = sim.store.vel[sim.store.alive()]
    assert np.allclose(v.sum(axis=0), 0.0, atol=1e-12)
    a, b = build_simulation(c), build_simulation(c, seed=4)
    assert np.array_equal(a.current_positions(), x)
    assert not np.array_equal(b.current_positions(), x)


# ------------------------------------------------------------------ records
def test_event_log_roundtrip(tmp_path):
    sim = build_simulation(parse_config(GAS))
    path = tmp_path / "ev.jsonl"
    w = EventWriter(str(path)).attach(sim)
    sim.run(max_events=300)
    sim.log.flush()
    w.close()
    got = read_events(str(path))
    want = sim.log.entries()
    assert [(e.seq, e.time, e.particle, e.partner, e.qualifier) for e in got] == \
        [(e.seq, e.time, e.particle, e.partner, e.qualifier) for e in want]
    lines = path.read_text().splitlines()
    assert json.loads(lines[0]) == {"format": "aedsim-events", "version": 1}
    assert list(json.loads(lines[1])) == ["seq", "time", "particle", "partner", "qualifier"]


def test_partial_marker_is_detected(tmp_path):
    sim = build_simulation(parse_config(GAS))
    path = tmp_path / "ev.jsonl"
    w = EventWriter(str(path)).attach(sim)
    sim.run(max_events=10)
    sim.log.flush()
    w.abort()
    with pytest.raises(RecordError):
        read_events(str(path))


def test_bad_header_is_rejected(tmp_path):
    path = tmp_path / "ev.jsonl"
    path.write_text('{"format": "other", "version": 1}\n')
    with pytest.raises(RecordError):
        read_events(str(path))


def test_snapshot_file_byte_identity(tmp_path):
    sim = build_simulation(parse_config(GAS))
    sim.run(max_events=500)
    p1, p2 = tmp_path / "a.snap", tmp_path / "b.snap"
    blob = write_snapshot(sim, str(p1))
    back = read_snapshot(str(p1))
    write_snapshot(back, str(p2))
    assert p1.read_bytes() == p2.read_bytes() == blob
    assert isinstance(back, Simulation) and back.t == sim.t


def test_cell_averages_conserve_counts_and_temperature(tmp_path):
    # coarse cells so each one holds enough particles for an unbiased variance
    c = parse_config(GAS.replace("count = 40", "count = 200").replace(
        "box = [8.0, 8.0, 8.0]", "box = [12.0, 12.0, 12.0]\ncell_size = 4.0"))
    sim = build_simulation(c)
    avg = CellAverager(sim)
    for k in range(5):
        sim.run(t_max=0.2 * (k + 1))
        avg.sample(0.2 * (k + 1))
    rows = avg.emit()
    assert sum(r.count for r in rows) == pytest.approx(200)
    kt = sum(r.count * r.temperature for r in rows) / 200
    assert kt == pytest.approx(1.0, rel=0.15)
    assert len(rows) == 27
    prof = slab_profile(rows, axis=0)
    assert prof[:, 1].sum() == pytest.approx(200)


# ------------------------------------------------------------------ command line
def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", write(tmp_path, GAS)]) == 0
    assert "ok (edmd, 3D, 1 species, 40 particles)" in capsys.readouterr().out
    text = GAS.replace("kT = 1.0", "kT = 1.0\nfoo = 1")
    assert main(["validate", write(tmp_path, text, "bad.toml")]) == 1
    line = text.splitlines().index("foo = 1") + 1
    assert f"line {line}: particles.foo: unknown key" in capsys.readouterr().err


def test_cli_run_writes_records(tmp_path, capsys):
    cfg = write(tmp_path, GAS + "\n[output]\nsnapshot_every = 500\naverages_every = 0.1\n"
                "averages_window = 2\n")
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out), "--max-events", "1200"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["events"] == 1200
    files = sorted(os.listdir(out))
    assert "events.jsonl" in files and "final.snap" in files and "summary.json" in files
    assert [f for f in files if f.startswith("snapshot-")] == [
        "snapshot-000000000500.snap", "snapshot-000000001000.snap"]
    assert len(read_events(str(out / "events.jsonl"))) == 1200
    assert read_averages(str(out / "averages.jsonl"))


def test_cli_replay_matches_original(tmp_path, capsys):
    cfg = write(tmp_path, GAS + "\n[output]\nsnapshot_every = 500\n")
    out = tmp_path / "out"
    main(["run", cfg, "--out", str(out)])
    rep = tmp_path / "rep"
    assert main(["replay", str(out / "snapshot-000000001000.snap"), cfg, "--out", str(rep)]) == 0
    capsys.readouterr()
    orig = read_events(str(out / "events.jsonl"))
    again = read_events(str(rep / "replay-events.jsonl"))
    assert len(again) == 1000
    assert [(e.seq, e.time, e.particle, e.partner, e.qualifier) for e in orig[1000:]] == \
        [(e.seq, e.time, e.particle, e.partner, e.qualifier) for e in again]
    assert (out / "final.snap").read_bytes() == (rep / "final.snap").read_bytes()


def test_execute_needs_a_termination():
    c = parse_config(GAS.replace("max_events = 2000", ""))
    with pytest.raises(ValueError):
        execute(build_simulation(c), c)


def test_log_level_from_environment():
    import logging
    assert setup_logging({"AEDSIM_LOG": "debug"}) == logging.DEBUG
    assert setup_logging({"AEDSIM_LOG": "30"}) == 30
    assert setup_logging({}) == logging.INFO
