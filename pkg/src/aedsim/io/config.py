"""TOML run configuration: parsing with line-numbered diagnostics, rendering, building.

Grammar (every key optional unless marked required)::

    [simulation]
    backend = "edmd"              # edmd | sedmd | fpkmc
    box = [10.0, 10.0, 10.0]      # required; 2 or 3 entries
    boundaries = ["periodic", ["thermal", "thermal"], "periodic"]
    seed = 0
    cell_size = 2.0               # or ncells = [5, 5, 5]
    mu = 1.3                      # neighbour-region enlargement
    use_nnl = false
    w_bi = 1                      # internal boundary-cell layers
    w_be = 1                      # external boundary-cell layers
    wall_temperature = 1.0
    check_every = 0               # full invariant scan cadence (events), 0 = off
    refresh_period = 0.0          # periodic mask refresh (time), 0 = off

    [[species]]                   # at least one
    name = "A"                    # required
    diameter = 1.0                # required
    mass = 1.0
    diffusion = 0.0
    decay_rate = 0.0
    decay_products = ["B"]
    birth_rate = 0.0
    nnl = false

    [interactions]
    matrix = [[true, false], [false, true]]   # symmetric, species order

    [[reaction]]
    species = ["A", "B"]          # required
    kind = "annihilate"           # elastic | annihilate | coalesce | products
    products = ["C"]
    cutoff = 1.2

    [[particles]]
    species = "A"                 # required
    count = 100
    placement = "random"          # random | lattice | explicit
    positions = [[1.0, 2.0, 3.0]] # for explicit
    region = [[0, 0, 0], [5, 10, 10]]
    kT = 1.0
    drift = [0.0, 0.0, 0.0]
    mode = "ed"                   # ed | td
    zero_momentum = true

    [dsmc]                        # sedmd only; fields of DsmcParams, species by name
    [fpkmc]                       # fpkmc only; fields of FpkmcParams

    [run]
    t_max = 10.0
    max_events = 100000
    max_collisions = 1000

    [output]
    event_log = true
    snapshot_every = 0            # events between snapshots, 0 = final only
    averages_every = 0.0          # time between cell-average samples, 0 = off
    averages_window = 10          # samples per emitted window
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

import numpy as np
import tomli
import tomli_w

from ..dsmc import DsmcParams
from ..fpkmc import FpkmcParams, fpkmc_cell_size
from ..model import EVENT_DRIVEN, REACTION_KINDS, TIME_DRIVEN, ModelError, PairRule, Species, \
    SpeciesTable
from ..spatial import KIND_CODES

BACKENDS = ("edmd", "sedmd", "fpkmc")
PLACEMENTS = ("random", "lattice", "explicit")


@dataclass(frozen=True)
class Diagnostic:
    line: int | None
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}" if self.line else self.message


class ConfigError(ValueError):
    """Raised with every diagnostic collected while loading a configuration."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass
class SpeciesConfig:
    name: str
    diameter: float
    mass: float = 1.0
    diffusion: float = 0.0
    decay_rate: float = 0.0
    decay_products: tuple = ()
    birth_rate: float = 0.0
    nnl: bool = False


@dataclass
class ReactionConfig:
    species: tuple
    kind: str = "elastic"
    products: tuple = ()
    cutoff: float | None = None


@dataclass
class PlacementConfig:
    species: str
    count: int = 0
    placement: str = "random"
    positions: tuple = ()
    region: tuple | None = None
    kT: float = 1.0
    drift: tuple | None = None
    mode: str = "ed"
    zero_momentum: bool = True


@dataclass
class RunConfig:
    t_max: float | None = None
    max_events: int | None = None
    max_collisions: int | None = None


@dataclass
class OutputConfig:
    event_log: bool = True
    snapshot_every: int = 0
    averages_every: float = 0.0
    averages_window: int = 10


@dataclass
class SimConfig:
    box: tuple
    species: tuple
    backend: str = "edmd"
    boundaries: tuple | None = None
    seed: int = 0
    cell_size: float | None = None
    ncells: tuple | None = None
    mu: float = 1.3
    use_nnl: bool = False
    w_bi: int = 1
    w_be: int = 1
    wall_temperature: float = 1.0
    check_every: int = 0
    refresh_period: float = 0.0
    interaction: tuple | None = None
    reactions: tuple = ()
    particles: tuple = ()
    dsmc: DsmcParams | None = None
    fpkmc: FpkmcParams | None = None
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def dim(self):
        return len(self.box)

    def boundary_list(self):
        return list(self.boundaries) if self.boundaries is not None else ["periodic"] * self.dim

    def species_index(self, name):
        for k, sp in enumerate(self.species):
            if sp.name == name:
                return k
        raise KeyError(name)

    def species_table(self) -> SpeciesTable:
        idx = {sp.name: k for k, sp in enumerate(self.species)}
        table = [Species(sp.name, sp.diameter, sp.mass, sp.diffusion, sp.decay_rate,
                         tuple(idx[p] for p in sp.decay_products), sp.birth_rate, sp.nnl)
                 for sp in self.species]
        rules = {(idx[r.species[0]], idx[r.species[1]]):
                 PairRule(r.kind, tuple(idx[p] for p in r.products), r.cutoff)
                 for r in self.reactions}
        inter = None if self.interaction is None else np.array(self.interaction, dtype=bool)
        return SpeciesTable(table, inter, rules)


# ------------------------------------------------------------------ parsing
_HEADER = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _line_index(text):
    """Map (section, occurrence, key) to the 1-based line that defines it.

    Sections are listed with an occurrence counter so array-of-table entries
    are told apart; the key None marks the header line itself.
    """
    where = {}
    section, occ = "", 0
    counts = {}
    for n, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            section = m.group(2)
            occ = counts.get(section, 0)
            counts[section] = occ + 1
            where.setdefault((section, occ, None), n)
            continue
        m = _KEY.match(line)
        if m:
            where.setdefault((section, occ, m.group(1)), n)
    return where


class _Reader:
    """Typed access to one table with diagnostics for unknown or bad keys."""

    def __init__(self, table, section, occ, lines, diags):
        self.table = dict(table)
        self.section, self.occ = section, occ
        self.lines, self.diags = lines, diags
        self.used = set()

    def line(self, key=None):
        return self.lines.get((self.section, self.occ, key),
                              self.lines.get((self.section, self.occ, None)))

    def error(self, key, msg):
        name = f"{self.section}.{key}" if key else self.section
        self.diags.append(Diagnostic(self.line(key), f"{name}: {msg}"))

    def get(self, key, kind, default=None, required=False):
        self.used.add(key)
        if key not in self.table:
            if required:
                self.error(None, f"missing required key '{key}'")
            return default
        v = self.table[key]
        try:
            return kind(v)
        except (TypeError, ValueError) as exc:
            self.error(key, f"bad value {v!r} ({exc})")
            return default

    def finish(self):
        for key in self.table:
            if key not in self.used:
                self.error(key, "unknown key")


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return int(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _vec(v):
    if not isinstance(v, list):
        raise TypeError("expected an array")
    return tuple(_num(x) for x in v)


def _names(v):
    if not isinstance(v, list):
        raise TypeError("expected an array of names")
    return tuple(_str(x) for x in v)


def _boundaries(v):
    if not isinstance(v, list):
        raise TypeError("expected an array")
    out = []
    for b in v:
        faces = (b, b) if isinstance(b, str) else tuple(b)
        if len(faces) != 2 or any(f not in KIND_CODES for f in faces):
            raise ValueError(f"boundary {b!r}; kinds are {sorted(KIND_CODES)}")
        out.append(b if isinstance(b, str) else tuple(faces))
    return tuple(out)


def _matrix(v):
    if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
        raise TypeError("expected an array of arrays")
    return tuple(tuple(_bool(x) for x in r) for r in v)


def _points(v):
    if not isinstance(v, list):
        raise TypeError("expected an array of points")
    return tuple(_vec(p) for p in v)


def _dataclass_from(reader, cls, convert, skip=()):
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.name in reader.table:
            kw[f.name] = reader.get(f.name, convert.get(f.name, _num))
    return kw


_DSMC_TYPES = {"species": _str, "dt": _num, "kT": _num, "v_rel_max": _num, "prefactor": _num,
               "cross_section_diameter": _num, "collision_mode": _str,
               "reservoir_density": _num, "reservoir_kT": _num, "reservoir_drift": _vec,
               "body_acceleration": _vec, "refresh_every": _int}
_FPKMC_TYPES = {"mu_p": _num, "mu_p_max": _num, "theta_pair": _num, "h_hop": _num,
                "max_hops": _int, "check_every": _int, "max_birth_tries": _int,
                "h_cluster": _num, "max_cluster": _int}


def parse_config(text: str) -> SimConfig:
    """Parse and validate a configuration; raises :class:`ConfigError`."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
        if line is None and "end of document" in str(exc):
            line = max(len(text.splitlines()), 1)
        raise ConfigError([Diagnostic(line, f"syntax: {exc}")])
    lines = _line_index(text)
    diags = []
    known = {"simulation", "species", "interactions", "reaction", "particles", "dsmc", "fpkmc",
             "run", "output"}
    for key in raw:
        if key not in known:
            diags.append(Diagnostic(lines.get((key, 0, None), lines.get(("", 0, key))),
                                    f"unknown section '{key}'"))

    def table(name, occ=0, value=None):
        v = raw.get(name, {}) if value is None else value
        if not isinstance(v, dict):
            diags.append(Diagnostic(lines.get(("", 0, name)), f"'{name}' must be a table"))
            v = {}
        return _Reader(v, name, occ, lines, diags)

    def array(name):
        v = raw.get(name, [])
        if not isinstance(v, list):
            diags.append(Diagnostic(lines.get(("", 0, name)),
                                    f"'{name}' must be an array of tables ([[{name}]])"))
            return []
        return [table(name, k, t) for k, t in enumerate(v)]

    s = table("simulation")
    cfg = dict(
        backend=s.get("backend", _str, "edmd"),
        box=s.get("box", _vec, None, required=True),
        boundaries=s.get("boundaries", _boundaries),
        seed=s.get("seed", _int, 0),
        cell_size=s.get("cell_size", _num),
        ncells=s.get("ncells", lambda v: tuple(_int(x) for x in v)),
        mu=s.get("mu", _num, 1.3),
        use_nnl=s.get("use_nnl", _bool, False),
        w_bi=s.get("w_bi", _int, 1),
        w_be=s.get("w_be", _int, 1),
        wall_temperature=s.get("wall_temperature", _num, 1.0),
        check_every=s.get("check_every", _int, 0),
        refresh_period=s.get("refresh_period", _num, 0.0),
    )
    s.finish()

    species = []
    for r in array("species"):
        species.append(SpeciesConfig(
            name=r.get("name", _str, "?", required=True),
            diameter=r.get("diameter", _num, 0.0, required=True),
            mass=r.get("mass", _num, 1.0), diffusion=r.get("diffusion", _num, 0.0),
            decay_rate=r.get("decay_rate", _num, 0.0),
            decay_products=r.get("decay_products", _names, ()),
            birth_rate=r.get("birth_rate", _num, 0.0), nnl=r.get("nnl", _bool, False)))
        r.finish()
    cfg["species"] = tuple(species)

    it = table("interactions")
    cfg["interaction"] = it.get("matrix", _matrix)
    it.finish()

    reactions = []
    for r in array("reaction"):
        reactions.append(ReactionConfig(
            species=r.get("species", _names, (), required=True),
            kind=r.get("kind", _str, "elastic"), products=r.get("products", _names, ()),
            cutoff=r.get("cutoff", _num)))
        r.finish()
    cfg["reactions"] = tuple(reactions)

    particles = []
    for r in array("particles"):
        particles.append(PlacementConfig(
            species=r.get("species", _str, "?", required=True),
            count=r.get("count", _int, 0), placement=r.get("placement", _str, "random"),
            positions=r.get("positions", _points, ()), region=r.get("region", _points),
            kT=r.get("kT", _num, 1.0), drift=r.get("drift", _vec),
            mode=r.get("mode", _str, "ed"), zero_momentum=r.get("zero_momentum", _bool, True)))
        r.finish()
    cfg["particles"] = tuple(particles)

    for name, cls, types in (("dsmc", DsmcParams, _DSMC_TYPES), ("fpkmc", FpkmcParams, _FPKMC_TYPES)):
        if name not in raw:
            cfg[name] = None
            continue
        r = table(name)
        kw = _dataclass_from(r, cls, types)
        r.finish()
        if name == "dsmc" and "species" in kw:
            try:
                kw["species"] = [sp.name for sp in species].index(kw["species"])
            except ValueError:
                r.error("species", f"unknown species '{kw['species']}'")
                kw.pop("species")
        try:
            cfg[name] = cls(**kw)
        except (TypeError, ValueError) as exc:
            r.error(None, str(exc))
            cfg[name] = None

    r = table("run")
    cfg["run"] = RunConfig(t_max=r.get("t_max", _num), max_events=r.get("max_events", _int),
                           max_collisions=r.get("max_collisions", _int))
    r.finish()
    r = table("output")
    cfg["output"] = OutputConfig(event_log=r.get("event_log", _bool, True),
                                 snapshot_every=r.get("snapshot_every", _int, 0),
                                 averages_every=r.get("averages_every", _num, 0.0),
                                 averages_window=r.get("averages_window", _int, 10))
    r.finish()

    if diags:
        raise ConfigError(diags)
    config = SimConfig(**cfg)
    diags = validate(config, lines)
    if diags:
        raise ConfigError(diags)
    return config


def validate(config: SimConfig, lines=None) -> list:
    """Semantic checks; returns diagnostics (empty when the config is valid)."""
    lines = lines or {}
    out = []

    def err(section, key, msg, occ=0):
        ln = lines.get((section, occ, key), lines.get((section, occ, None)))
        out.append(Diagnostic(ln, f"{section}{'.' + key if key else ''}: {msg}"))

    c = config
    if c.backend not in BACKENDS:
        err("simulation", "backend", f"unknown backend '{c.backend}', expected one of {BACKENDS}")
    if c.box is None or len(c.box) not in (2, 3) or any(x <= 0 for x in c.box):
        err("simulation", "box", "box needs 2 or 3 positive side lengths")
        return out
    d = c.dim
    if len(c.boundary_list()) != d:
        err("simulation", "boundaries", f"need {d} boundary entries")
    if c.ncells is not None and len(c.ncells) != d:
        err("simulation", "ncells", f"need {d} cell counts")
    if not c.species:
        err("species", None, "at least one [[species]] table is required")
        return out
    names = [sp.name for sp in c.species]
    if len(set(names)) != len(names):
        err("species", "name", "species names must be unique")
    for k, sp in enumerate(c.species):
        if sp.diameter < 0 or sp.mass <= 0 or sp.diffusion < 0:
            err("species", None, f"'{sp.name}': diameter and diffusion must be >= 0, mass > 0", k)
        if sp.decay_rate < 0 or sp.birth_rate < 0:
            err("species", None, f"'{sp.name}': all rates must be >= 0", k)
        for p in sp.decay_products:
            if p not in names:
                err("species", "decay_products", f"unknown species '{p}'", k)
    if c.interaction is not None:
        m = c.interaction
        ns = len(c.species)
        if len(m) != ns or any(len(row) != ns for row in m):
            err("interactions", "matrix", f"matrix must be {ns}x{ns}")
        elif any(m[a][b] != m[b][a] for a in range(ns) for b in range(ns)):
            err("interactions", "matrix", "interaction matrix must be symmetric")
    for k, r in enumerate(c.reactions):
        if len(r.species) != 2 or any(x not in names for x in r.species):
            err("reaction", "species", "need two known species names", k)
        if r.kind not in REACTION_KINDS:
            err("reaction", "kind", f"unknown kind '{r.kind}', expected one of {REACTION_KINDS}", k)
        for p in r.products:
            if p not in names:
                err("reaction", "products", f"unknown species '{p}'", k)
        if r.cutoff is not None and r.cutoff < 0:
            err("reaction", "cutoff", "cutoff must be >= 0", k)
    for k, p in enumerate(c.particles):
        if p.species not in names:
            err("particles", "species", f"unknown species '{p.species}'", k)
        if p.placement not in PLACEMENTS:
            err("particles", "placement", f"expected one of {PLACEMENTS}", k)
        if p.count < 0 or p.kT < 0:
            err("particles", None, "count and kT must be >= 0", k)
        if p.mode not in ("ed", "td"):
            err("particles", "mode", "mode must be 'ed' or 'td'", k)
        if any(len(x) != d for x in p.positions):
            err("particles", "positions", f"positions need {d} coordinates", k)
        if p.region is not None and (len(p.region) != 2 or any(len(x) != d for x in p.region)):
            err("particles", "region", f"region is [[lo x{d}], [hi x{d}]]", k)
    if c.dsmc is not None and c.backend != "sedmd":
        err("dsmc", None, "only used by the sedmd backend")
    if c.fpkmc is not None and c.backend != "fpkmc":
        err("fpkmc", None, "only used by the fpkmc backend")
    if c.refresh_period < 0 or c.check_every < 0:
        err("simulation", None, "refresh_period and check_every must be >= 0")
    if out:
        return out
    try:
        table = c.species_table()
    except ModelError as exc:
        err("species", None, str(exc))
        return out
    from ..driver import required_cell_size
    need = required_cell_size(table, c.use_nnl, c.mu)
    if c.backend == "fpkmc":
        need = max(need, fpkmc_cell_size(table, c.fpkmc))
    box = np.array(c.box)
    if c.cell_size is not None:
        size = np.full(d, c.cell_size)
    elif c.ncells is not None:
        size = box / np.array(c.ncells)
    else:
        size = None
    if size is not None and (size < need * (1 - 1e-12)).any():
        err("simulation", "cell_size" if c.cell_size is not None else "ncells",
            f"cell size {size.min():g} is below the largest interaction range {need:g}")
    elif size is None and (box < need).any():
        err("simulation", "box", f"box is smaller than the largest interaction range {need:g}")
    return out


# ---------------------------------------------------------------- rendering
def _plain(obj):
    """Dataclass -> dict with tuples as lists and None values dropped."""
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return {k: conv(v) for k, v in dataclasses.asdict(obj).items() if v is not None}


def render(config: SimConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    c = config
    sim = {k: v for k, v in _plain(c).items()
           if k not in ("species", "interaction", "reactions", "particles", "dsmc", "fpkmc",
                        "run", "output")}
    doc = {"simulation": sim, "species": [_plain(sp) for sp in c.species]}
    if c.interaction is not None:
        doc["interactions"] = {"matrix": [list(r) for r in c.interaction]}
    if c.reactions:
        doc["reaction"] = [_plain(r) for r in c.reactions]
    if c.particles:
        doc["particles"] = [_plain(p) for p in c.particles]
    if c.dsmc is not None:
        d = _plain(c.dsmc)
        d["species"] = c.species[c.dsmc.species].name
        doc["dsmc"] = d
    if c.fpkmc is not None:
        doc["fpkmc"] = _plain(c.fpkmc)
    doc["run"] = _plain(c.run)
    doc["output"] = _plain(c.output)
    return tomli_w.dumps(doc)


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ----------------------------------------------------------------- building
def _maxwell(rng, n, dim, kT, mass, drift, zero_momentum):
    v = rng.normal(0.0, np.sqrt(kT / mass), size=(n, dim)) if kT > 0 else np.zeros((n, dim))
    if zero_momentum and n > 1:
        v -= v.mean(axis=0)
    if drift is not None:
        v += np.asarray(drift, dtype=float)
    return v


def _lattice(n, lo, hi):
    """n sites of the smallest simple lattice filling the box [lo, hi)."""
    dim = len(lo)
    ext = hi - lo
    # sites per axis proportional to the side lengths
    k = np.maximum(1, np.ceil(ext * (n / np.prod(ext)) ** (1 / dim)).astype(int))
    while np.prod(k) < n:
        k[np.argmin(ext / k)] += 1
    grids = np.meshgrid(*[(np.arange(k[a]) + 0.5) * ext[a] / k[a] + lo[a] for a in range(dim)],
                        indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)[:n], ext / k


class PlacementError(ValueError):
    pass


def _random_positions(rng, n, lo, hi, placed, placed_sp, sp, table, box, periodic, tries=1000):
    pd = table.pair_diameter[sp]
    out = []
    pos = list(placed)
    spc = list(placed_sp)
    for _ in range(n):
        for _attempt in range(tries):
            x = lo + rng.random(len(lo)) * (hi - lo)
            if pos:
                P = np.asarray(pos)
                S = np.asarray(spc)
                dr = P - x
                dr[:, periodic] -= box[periodic] * np.rint(dr[:, periodic] / box[periodic])
                need = pd[S]
                mask = need > 0
                if mask.any() and (np.einsum("ij,ij->i", dr[mask], dr[mask]) < need[mask] ** 2).any():
                    continue
            out.append(x)
            pos.append(x)
            spc.append(sp)
            break
        else:
            raise PlacementError(f"could not place particle {len(out) + 1} of {n} "
                                 f"without overlap after {tries} tries")
    return np.array(out).reshape(-1, len(lo))


def initial_positions(config: SimConfig, table: SpeciesTable, rng):
    """(positions, species, velocities, modes) for every [[particles]] block."""
    box = np.array(config.box)
    dim = len(box)
    periodic = np.array([(b if isinstance(b, str) else b[0]) == "periodic"
                         for b in config.boundary_list()])
    pos_all, sp_all, vel_all, mode_all = [], [], [], []
    for blk in config.particles:
        sp = config.species_index(blk.species)
        lo, hi = (np.zeros(dim), box.copy()) if blk.region is None else \
            (np.array(blk.region[0]), np.array(blk.region[1]))
        if blk.placement == "explicit":
            x = np.array(blk.positions, dtype=float).reshape(-1, dim)
        elif blk.placement == "lattice":
            x, spacing = _lattice(blk.count, lo, hi)
            if min(spacing) < table.pair_diameter[sp, sp] * (1 - 1e-12):
                raise PlacementError(f"lattice spacing {min(spacing):g} for {blk.count} "
                                     f"'{blk.species}' particles is below the contact distance")
        else:
            x = _random_positions(rng, blk.count, lo, hi,
                                  np.concatenate(pos_all) if pos_all else [],
                                  np.concatenate(sp_all) if sp_all else [],
                                  sp, table, box, periodic)
        n = len(x)
        pos_all.append(x)
        sp_all.append(np.full(n, sp, dtype=np.int64))
        vel_all.append(_maxwell(rng, n, dim, blk.kT, table.mass[sp], blk.drift, blk.zero_momentum))
        mode_all.append(np.full(n, TIME_DRIVEN if blk.mode == "td" else EVENT_DRIVEN))
    if not pos_all:
        z = np.zeros((0, dim))
        return z, np.zeros(0, dtype=np.int64), z, np.zeros(0, dtype=np.int64)
    return (np.concatenate(pos_all), np.concatenate(sp_all), np.concatenate(vel_all),
            np.concatenate(mode_all))


def build_simulation(config: SimConfig, seed=None, keep_log=True):
    """Simulation with every particle placed; ``seed`` overrides the config seed."""
    from ..driver import Simulation
    seed = config.seed if seed is None else int(seed)
    table = config.species_table()
    sim = Simulation(table, list(config.box), config.boundary_list(), backend=config.backend,
                     seed=seed, cell_size=config.cell_size, ncells=config.ncells, mu=config.mu,
                     use_nnl=config.use_nnl, w_bi=config.w_bi, w_be=config.w_be,
                     wall_temperature=config.wall_temperature, dsmc=config.dsmc,
                     fpkmc=config.fpkmc, check_every=config.check_every, keep_log=keep_log)
    # placement draws from its own stream so the engine stream starts untouched
    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    pos, sp, vel, mode = initial_positions(config, table, rng)
    if len(pos):
        sim.ensure_capacity(len(pos))
        for k in range(len(pos)):
            sim.add_particle(pos[k], int(sp[k]), vel[k], int(mode[k]))
    if config.refresh_period > 0:
        sim.schedule_refresh(config.refresh_period)
    return sim
