"""One-dimensional absorbing-interval propagators and their samplers.

Everything is expressed for the interval (-1, 1) with the walker started at
0 and dimensionless time ``s = D t / a**2`` (``a`` is the half-width). Two
series represent the same functions: the eigenfunction expansion converges
fast for long times and the image sum for short times; they are switched at
``s = CROSSOVER``. Series are truncated once a term drops below 1e-12 of the
running total.

A cube protection factorises into independent intervals, one per axis.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

CROSSOVER = 0.2
TOL = 1e-12
_MAXTERMS = 200


@njit(cache=True)
def survival(s):
    """Probability of not having left (-1, 1) by scaled time s."""
    if s <= 0.0:
        return 1.0
    total = 0.0
    if s < CROSSOVER:
        # 1 - 2 sum (-1)^(n+1) erfc((2n-1) / (2 sqrt s))
        r = 0.5 / math.sqrt(s)
        for n in range(1, _MAXTERMS):
            term = math.erfc((2 * n - 1) * r)
            total += term if n % 2 == 1 else -term
            if term < TOL * (total if total > 0 else 1.0) or term == 0.0:
                break
        return 1.0 - 2.0 * total
    for k in range(_MAXTERMS):
        n = 2 * k + 1
        term = 4.0 / (math.pi * n) * math.exp(-n * n * math.pi * math.pi * s / 4.0)
        total += term if k % 2 == 0 else -term
        if term < TOL * abs(total):
            break
    return total


@njit(cache=True)
def exit_density(s):
    """Density of the first-exit time in scaled units, -dS/ds."""
    if s <= 0.0:
        return 0.0
    total = 0.0
    if s < CROSSOVER:
        c = 1.0 / (math.sqrt(math.pi) * s * math.sqrt(s))
        for n in range(1, _MAXTERMS):
            m = 2 * n - 1
            term = c * m * math.exp(-m * m / (4.0 * s))
            total += term if n % 2 == 1 else -term
            if term < TOL * (abs(total) if total != 0 else 1.0) or term == 0.0:
                break
        return total
    for k in range(_MAXTERMS):
        n = 2 * k + 1
        term = math.pi * n * math.exp(-n * n * math.pi * math.pi * s / 4.0)
        total += term if k % 2 == 0 else -term
        if term < TOL * abs(total):
            break
    return total


@njit(cache=True)
def position_density(x, s):
    """Unnormalised density at x of walkers still inside at scaled time s."""
    if x <= -1.0 or x >= 1.0:
        return 0.0
    total = 0.0
    if s < CROSSOVER:
        g = 1.0 / math.sqrt(4.0 * math.pi * s)
        for m in range(_MAXTERMS):
            for sgn in (1, -1):
                if m == 0 and sgn == -1:
                    continue
                y = x - 2.0 * m * sgn
                term = g * math.exp(-y * y / (4.0 * s))
                total += term if m % 2 == 0 else -term
            if m > 0 and g * math.exp(-(2.0 * m - 1.0) ** 2 / (4.0 * s)) < TOL * abs(total):
                break
        return max(total, 0.0)
    for k in range(_MAXTERMS):
        n = 2 * k + 1
        e = math.exp(-n * n * math.pi * math.pi * s / 4.0)
        total += math.cos(n * math.pi * x / 2.0) * e
        if e < TOL * abs(total):
            break
    return max(total, 0.0)


@njit(cache=True)
def position_cdf(x, s):
    """Unnormalised probability of being inside (-1, x) at scaled time s."""
    if x <= -1.0:
        return 0.0
    if x >= 1.0:
        return survival(s)
    total = 0.0
    if s < CROSSOVER:
        r = 1.0 / math.sqrt(4.0 * s)
        for m in range(_MAXTERMS):
            for sgn in (1, -1):
                if m == 0 and sgn == -1:
                    continue
                c = 2.0 * m * sgn
                term = 0.5 * (math.erf((x - c) * r) - math.erf((-1.0 - c) * r))
                total += term if m % 2 == 0 else -term
            if m > 0 and math.erfc((2.0 * m - 1.0) * r) < TOL:
                break
        return total
    for k in range(_MAXTERMS):
        n = 2 * k + 1
        e = math.exp(-n * n * math.pi * math.pi * s / 4.0)
        sg = 1.0 if k % 2 == 0 else -1.0
        total += 2.0 / (n * math.pi) * (math.sin(n * math.pi * x / 2.0) + sg) * e
        if e < TOL * abs(total):
            break
    return total


@njit(cache=True)
def _invert_survival(u):
    """Scaled time s with survival(s) = u, by safeguarded Newton in log s."""
    if u >= 1.0:
        return 0.0
    if u <= 0.0:
        return np.inf
    lo, hi = 1e-4, 1.0
    while survival(hi) > u:
        hi *= 2.0
    while survival(lo) < u:
        lo *= 0.5
        if lo < 1e-300:
            return lo
    # initial guess from the leading eigen term where it is accurate
    s = -math.log(u * math.pi / 4.0) / (math.pi * math.pi / 4.0)
    if not (lo < s < hi):
        s = math.sqrt(lo * hi)
    for _ in range(200):
        f = survival(s) - u
        if f > 0:
            lo = s
        else:
            hi = s
        d = exit_density(s)
        step_ok = False
        if d > 0:
            sn = s + f / d
            if lo < sn < hi:
                step_ok = True
        if not step_ok:
            sn = math.sqrt(lo * hi) if hi / lo > 4.0 else 0.5 * (lo + hi)
        if abs(sn - s) <= 1e-14 * s:
            return sn
        s = sn
    return s


@njit(cache=True)
def _invert_position(u, s):
    """x in (-1, 1) with position_cdf(x, s) = u * survival(s)."""
    target = u * survival(s)
    lo, hi = -1.0, 1.0
    x = 0.0
    if s < 0.05:
        # near-Gaussian: start from the free-space quantile
        x = max(-0.999, min(0.999, math.sqrt(4.0 * s) * _erfinv(2.0 * u - 1.0)))
    for _ in range(200):
        f = position_cdf(x, s) - target
        if f < 0:
            lo = x
        else:
            hi = x
        d = position_density(x, s)
        ok = False
        if d > 0:
            xn = x - f / d
            if lo < xn < hi:
                ok = True
        if not ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-14 or hi - lo <= 1e-15:
            return xn
        x = xn
    return x


@njit(cache=True)
def _erfinv(y):
    # Giles' single-precision approximation, polished by two Newton steps
    if y <= -1.0:
        return -np.inf
    if y >= 1.0:
        return np.inf
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        p = 3.43273939e-07 + p * w
        p = -3.5233877e-06 + p * w
        p = -4.39150654e-06 + p * w
        p = 0.00021858087 + p * w
        p = -0.00125372503 + p * w
        p = -0.00417768164 + p * w
        p = 0.246640727 + p * w
        p = 1.50140941 + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        p = 0.000100950558 + p * w
        p = 0.00134934322 + p * w
        p = -0.00367342844 + p * w
        p = 0.00573950773 + p * w
        p = -0.0076224613 + p * w
        p = 0.00943887047 + p * w
        p = 1.00167406 + p * w
        p = 2.83297682 + p * w
    x = p * y
    for _ in range(2):
        err = math.erf(x) - y
        x -= err / (2.0 / math.sqrt(math.pi) * math.exp(-x * x))
    return x


@njit(cache=True)
def sample_exit_time(u, a, D):
    """First-exit time from (-a, a) started at the centre, from uniform u."""
    if D <= 0.0:
        return np.inf
    return _invert_survival(u) * a * a / D


@njit(cache=True)
def sample_position(u, a, D, dt):
    """Position at elapsed dt in (-a, a) conditional on no exit, from uniform u."""
    if dt <= 0.0 or D <= 0.0:
        return 0.0
    s = D * dt / (a * a)
    return a * _invert_position(u, s)


def free_greens(dr, dt, D, dim):
    """Normalised free-space diffusion kernel in ``dim`` dimensions."""
    dr = np.asarray(dr, dtype=float)
    r2 = np.sum(dr * dr, axis=-1) if dr.ndim and dr.shape[-1] == dim else dr * dr
    return (4.0 * np.pi * D * dt) ** (-dim / 2.0) * np.exp(-r2 / (4.0 * D * dt))


class CubeSampler:
    """First-passage and no-passage draws for a cube protection of half-width a."""

    def __init__(self, rng):
        self.rng = rng

    def first_passage(self, a, D, dim):
        """(exit time, exit axis, side) with side 0 = low wall, 1 = high wall."""
        u = self.rng.random(dim)
        times = np.array([sample_exit_time(x, a, D) for x in u])
        ax = int(np.argmin(times))
        side = int(self.rng.random() < 0.5)
        return float(times[ax]), ax, side

    def no_passage(self, a, D, dt, dim):
        """Displacement from the centre after dt conditional on staying inside."""
        u = self.rng.random(dim)
        return np.array([sample_position(x, a, D, dt) for x in u])

    def exit_point(self, a, D, dt, dim, axis, side):
        """Displacement at the exit time: pinned on the exit wall, no-passage elsewhere."""
        disp = self.no_passage(a, D, dt, dim)
        disp[axis] = a if side else -a
        return disp
