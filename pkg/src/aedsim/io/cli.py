"""Command line: ``aedsim run | validate | replay``.

Log verbosity comes from the ``AEDSIM_LOG`` environment variable (a level
name such as ``DEBUG`` or ``WARNING``, or a number; default ``INFO``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, build_simulation, load_config
from .records import AveragesWriter, CellAverager, EventWriter, read_snapshot, write_snapshot

log = logging.getLogger("aedsim")


def setup_logging(env=None):
    level = (os.environ if env is None else env).get("AEDSIM_LOG", "INFO").strip()
    lvl = int(level) if level.isdigit() else logging.getLevelName(level.upper())
    if not isinstance(lvl, int):
        lvl = logging.INFO
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s", force=True)
    return lvl


def execute(sim, config, out_dir=None, max_events=None, event_file="events.jsonl"):
    """Run ``sim`` to the configured termination, writing records to ``out_dir``.

    ``max_events`` and the configured event limit count every event since the
    start of the run (including those before a snapshot), so a replay stops
    where the original run stopped. Returns a summary dict.
    """
    run, out = config.run, config.output
    limit = run.max_events if max_events is None else max_events
    limit = np.iinfo(np.int64).max if limit is None else int(limit)
    t_max = np.inf if run.t_max is None else run.t_max
    if (limit == np.iinfo(np.int64).max and t_max == np.inf and run.max_collisions is None):
        raise ValueError("no termination: set run.t_max, run.max_events or run.max_collisions")
    target = None if run.max_collisions is None else run.max_collisions
    writer = averages = averager = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if out.event_log:
            writer = EventWriter(os.path.join(out_dir, event_file)).attach(sim)
        if out.averages_every > 0:
            averager = CellAverager(sim)
            averages = AveragesWriter(os.path.join(out_dir, "averages.jsonl"))
    every = out.averages_every if averager is not None else 0.0
    next_sample = sim.t + every if every > 0 else np.inf
    last_snap = sim.clock.event_count
    sim.start()
    try:
        while True:
            if sim.clock.event_count >= limit:
                break
            if target is not None and sim.backend.counters()["collisions"] >= target:
                break
            t_next = min(sim.queue.peek_time(), sim.external.peek_time())
            if next_sample <= t_max and next_sample < t_next:
                averager.sample(next_sample)
                if averager.samples >= out.averages_window:
                    averages.write(averager.emit())
                next_sample += every
                continue
            if t_next > t_max or t_next == np.inf:
                break
            chunk = limit - sim.clock.event_count
            if out.snapshot_every > 0 and out_dir is not None:
                chunk = min(chunk, last_snap + out.snapshot_every - sim.clock.event_count)
            left = None if target is None else target - sim.backend.counters()["collisions"]
            n = sim.run(max_events=chunk, t_max=min(t_max, next_sample), max_collisions=left)
            if out.snapshot_every > 0 and out_dir is not None and \
                    sim.clock.event_count - last_snap >= out.snapshot_every:
                last_snap = sim.clock.event_count
                write_snapshot(sim, os.path.join(out_dir, f"snapshot-{last_snap:012d}.snap"))
            if n == 0:
                break
    except BaseException:
        if writer is not None:
            sim.log.flush()
            writer.abort()
        raise
    sim.log.flush()
    if writer is not None:
        writer.close()
    if averages is not None:
        if averager.samples:
            averages.write(averager.emit())
        averages.close()
    summary = {"t": sim.t, "events": sim.clock.event_count, "particles": int(sim.store.n_alive),
               "counters": {k: (v.tolist() if hasattr(v, "tolist") else v)
                            for k, v in sim.backend.counters().items()},
               "violations": dict(sim.violations)}
    if out_dir is not None:
        write_snapshot(sim, os.path.join(out_dir, "final.snap"))
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def cmd_validate(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 1
    n = sum(p.count if p.placement != "explicit" else len(p.positions) for p in cfg.particles)
    print(f"{args.config}: ok ({cfg.backend}, {cfg.dim}D, {len(cfg.species)} species, "
          f"{n} particles)")
    return 0


def cmd_run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 1
    sim = build_simulation(cfg, seed=args.seed)
    summary = execute(sim, cfg, args.out, args.max_events)
    log.info("finished at t=%.6g after %d events", summary["t"], summary["events"])
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_replay(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 1
    sim = read_snapshot(args.snapshot)
    summary = execute(sim, cfg, args.out, args.max_events, event_file="replay-events.jsonl")
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="aedsim", description="Asynchronous event-driven particle "
                                 "simulation (EDMD, SEDMD/DSMC, FPKMC).")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configuration")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the configured seed")
    r.add_argument("--max-events", type=int, default=None, help="override run.max_events")
    r.add_argument("--out", default=None, help="output directory")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a configuration and report diagnostics")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    p = sub.add_parser("replay", help="continue a run from a snapshot")
    p.add_argument("snapshot")
    p.add_argument("config")
    p.add_argument("--max-events", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None):
    setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
