"""First-passage kinetic Monte Carlo backend."""
from .backend import (FPKMCBackend, FPKMCError, FpkmcParams, PAIR_CM_EXIT, PAIR_COLLIDE,
                      PAIR_DECAY, PAIR_DISSOLVE, fpkmc_cell_size)
from .cluster import species_hop_rates, td_cluster_hop
from .pair import PairProtection, WalkStream, hop_walk, walk
from .propagators import (CubeSampler, exit_density, free_greens, position_cdf, position_density,
                          sample_exit_time, sample_position, survival)

__all__ = [
    "CubeSampler", "FPKMCBackend", "FPKMCError", "FpkmcParams", "PAIR_CM_EXIT", "PAIR_COLLIDE",
    "PAIR_DECAY", "PAIR_DISSOLVE", "PairProtection", "WalkStream", "exit_density",
    "fpkmc_cell_size", "free_greens", "hop_walk", "position_cdf", "position_density",
    "sample_exit_time", "sample_position", "species_hop_rates", "survival", "td_cluster_hop",
    "walk",
]
