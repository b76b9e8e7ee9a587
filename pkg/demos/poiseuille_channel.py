"""Plane Poiseuille flow of a DSMC gas between two thermal walls.

A body force drives the gas along x between walls at y = 0 and y = H. After a
warm-up the slab-averaged velocity profile is printed next to the parabola
fitted through it; the density stays flat across the channel.
"""
import time

import numpy as np

from aedsim import Simulation, Species, SpeciesTable
from aedsim.dsmc import DsmcParams
from aedsim.io.records import CellAverager, slab_profile

n, box = 5000, np.array([10.0, 10.0, 5.0])
sp = SpeciesTable([Species("S", 0.0)], interaction=[[False]])
params = DsmcParams(species=0, dt=0.1, cross_section_diameter=0.35, v_rel_max=7.0,
                    body_acceleration=(0.01, 0.0, 0.0))
sim = Simulation(sp, list(box), ["periodic", ["thermal", "thermal"], "periodic"],
                 backend="sedmd", seed=1, dsmc=params, ncells=(5, 10, 3), capacity=n,
                 keep_log=False)
rng = np.random.default_rng(1)
sim.add_particles(rng.random((n, 3)) * box, 0, rng.normal(size=(n, 3)))

start = time.perf_counter()
t = 80.0
sim.run(t_max=t)
avg = CellAverager(sim)
for _ in range(150):
    t += 1.0
    sim.run(t_max=t)
    avg.sample(t)
prof = slab_profile(avg.emit(), axis=1)
# first column is the slab index; convert to slab centres
y = (prof[:, 0] + 0.5) * box[1] / len(prof)
dens, vx = prof[:, 2], prof[:, 3]
fit = np.polyfit(y, vx, 2)
print(f"{n} particles, {time.perf_counter() - start:.1f} s")
print(f"{'y':>6} {'density':>9} {'v_x':>8} {'parabola':>9}")
for row in zip(y, dens / dens.mean(), vx, np.polyval(fit, y)):
    print("{:6.2f} {:9.3f} {:8.4f} {:9.4f}".format(*row))
print(f"peak of the fitted parabola at y = {-fit[1] / (2 * fit[0]):.2f} (centre {box[1] / 2})")
