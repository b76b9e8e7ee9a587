"""Asynchronous event-driven particle simulation (EDMD, SEDMD/DSMC, FPKMC)."""
from .driver import EventLogEntry, Simulation, SimulationError
from .model import PairRule, Species, SpeciesTable, overlap_distance

__all__ = ["EventLogEntry", "PairRule", "Simulation", "SimulationError", "Species",
           "SpeciesTable", "overlap_distance"]
__version__ = "0.1.0"
