"""Pair protections: centre-of-diffusion-mass walker plus a hopping difference walker.

For particles i, j with diffusion coefficients D_i, D_j the coordinates

    R = (D_j r_i + D_i r_j) / (D_i + D_j),    r = r_i - r_j

are independent Brownian motions with D_R = D_i D_j / (D_i + D_j) and
D_r = D_i + D_j (the cross covariance is (2 D_j D_i - 2 D_i D_j) dt / (D_i +
D_j) = 0). Conversely r_i = R + D_i / (D_i + D_j) r and r_j = R - D_j /
(D_i + D_j) r.

R is protected by a cube (exact first-passage sampling). r lives in the shell
D_ij < |r| < b and is advanced with Gaussian hops; a Brownian-bridge test
catches crossings of either sphere between hop endpoints. The random numbers
for the walk come from a private generator whose starting state is saved, so
an interrupted walk can be replayed exactly up to any hop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

WALK_RUNNING = 0
WALK_INNER = 1
WALK_OUTER = 2

CHUNK = 4096


@njit(cache=True)
def hop_walk(r, sigma, r_in, r_out, reflect, normals, uniforms, n_steps):
    """Advance the difference walker r in place by at most n_steps hops.

    ``normals`` has shape (n_steps, d) and ``uniforms`` (n_steps, 2); every
    hop consumes one row of each, whatever happens, so the stream position is
    a pure function of the hop count. Returns (status, hops taken).
    """
    d = r.shape[0]
    s2 = sigma * sigma
    rn = np.empty(d)
    for k in range(n_steps):
        r0 = 0.0
        r1 = 0.0
        for ax in range(d):
            rn[ax] = r[ax] + sigma * normals[k, ax]
            r0 += r[ax] * r[ax]
            r1 += rn[ax] * rn[ax]
        r0 = math.sqrt(r0)
        r1 = math.sqrt(r1)
        if r1 >= r_out:
            for ax in range(d):
                r[ax] = rn[ax] * (r_out / r1)
            return WALK_OUTER, k + 1
        if r1 <= r_in:
            if reflect:
                f = (2.0 * r_in - r1) / r1 if r1 > 0 else 1.0
                for ax in range(d):
                    rn[ax] *= f
                r1 = 2.0 * r_in - r1
                if r1 >= r_out:
                    for ax in range(d):
                        r[ax] = rn[ax] * (r_out / r1)
                    return WALK_OUTER, k + 1
            else:
                for ax in range(d):
                    r[ax] = rn[ax] * (r_in / r1) if r1 > 0 else r[ax] * (r_in / r0)
                return WALK_INNER, k + 1
        elif not reflect and uniforms[k, 0] < math.exp(-2.0 * (r0 - r_in) * (r1 - r_in) / s2):
            for ax in range(d):
                r[ax] = rn[ax] * (r_in / r1)
            return WALK_INNER, k + 1
        if uniforms[k, 1] < math.exp(-2.0 * (r_out - r0) * (r_out - r1) / s2):
            for ax in range(d):
                r[ax] = rn[ax] * (r_out / r1)
            return WALK_OUTER, k + 1
        for ax in range(d):
            r[ax] = rn[ax]
    return WALK_RUNNING, n_steps


class WalkStream:
    """Chunked random numbers from a private generator with a saved start state."""

    def __init__(self, dim, seed=None, state=None):
        self.dim = dim
        if state is None:
            self.gen = np.random.Generator(np.random.PCG64(seed))
            self.saved = self.gen.bit_generator.state
        else:
            self.saved = state
            self.gen = np.random.Generator(np.random.PCG64())
            self.gen.bit_generator.state = state

    def chunk(self):
        return self.gen.standard_normal((CHUNK, self.dim)), self.gen.random((CHUNK, 2))


def walk(r0, sigma, r_in, r_out, reflect, state, max_hops, stop_after=None):
    """Run a walk from the saved generator ``state``.

    Stops at absorption, after ``stop_after`` hops, or past ``max_hops``
    (status WALK_RUNNING). Returns (status, hops, final r).
    """
    r = np.array(r0, dtype=float)
    if not reflect and float(np.linalg.norm(r)) <= r_in:
        return WALK_INNER, 0, r
    stream = WalkStream(len(r), state=state)
    limit = max_hops if stop_after is None else min(stop_after, max_hops)
    done = 0
    while done < limit:
        nz, uz = stream.chunk()
        n = min(CHUNK, limit - done)
        st, k = hop_walk(r, sigma, r_in, r_out, reflect, nz, uz, n)
        done += k
        if st != WALK_RUNNING:
            return st, done, r
    return WALK_RUNNING, done, r


@dataclass
class PairProtection:
    """State of one protected pair; both members carry the same queue record."""

    i: int
    j: int
    t0: float
    R0: np.ndarray
    r0: np.ndarray
    a_cm: float
    b: float
    d_contact: float
    D_cm: float
    D_rel: float
    alpha_i: float
    alpha_j: float
    half_width: float
    sigma: float
    tau: float
    reflect: bool
    rng_state: dict
    walk_status: int = WALK_RUNNING
    walk_hops: int = 0
    walk_end: np.ndarray | None = None
    t_walk: float = np.inf
    t_cm: float = np.inf
    cm_axis: int = -1
    cm_side: int = 0
    t_decay_i: float = np.inf
    t_decay_j: float = np.inf
    outcome: int = 0
    t_event: float = np.inf
    extra: dict = field(default_factory=dict)

    @property
    def members(self):
        return (self.i, self.j)

    def replay(self, hops, max_hops):
        """Difference walker after ``hops`` hops, recomputed from the saved state."""
        st, k, r = walk(self.r0, self.sigma, self.d_contact, self.b, self.reflect,
                        self.rng_state, max_hops, stop_after=hops)
        return st, k, r

    def positions(self, R, r):
        """Member positions (unwrapped relative to R0's image) from R and r."""
        return R + self.alpha_i * r, R - self.alpha_j * r
