"""Compiled samplers driven by a counter-based generator.

Uniform number ``k`` for (seed, trial, coordinate) is
``mix64(row(seed, trial) + coordinate * G2 + k * G1)`` where ``mix64`` is the
SplitMix64 finalizer.  Every draw is therefore a pure function of its
coordinates, so trials can be sharded across threads in any order.
"""

import math

import numpy as np
from numba import njit

G1 = np.uint64(0x9E3779B97F4A7C15)
G2 = np.uint64(0xD1B54A32D192ED03)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0
TWO53 = 9007199254740992.0
INVERSION_MAX = 30.0

_opts = dict(cache=True, nogil=True, fastmath=False)


@njit(**_opts)
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(**_opts)
def row_key(key, trial):
    return mix64(key + np.uint64(trial) * G1)


@njit(**_opts)
def coord_state(row, coord):
    return row + np.uint64(coord) * G2


def poisson_cdf_table(x):
    """Per-coordinate CDF thresholds ``ceil(F(k) * 2**53)`` for inversion.

    Rows are padded with ``2**53`` (which every 53-bit uniform is below), placed
    once the remaining tail mass drops under 1e-17.
    """
    x = np.asarray(x, dtype=np.float64)
    small = np.minimum(x, INVERSION_MAX)
    kmax = int(small.max(initial=0.0) + 12 * math.sqrt(small.max(initial=0.0)) + 40)
    table = np.full((x.size, kmax + 1), np.uint64(2**53), dtype=np.uint64)
    for i, lam in enumerate(small):
        if lam <= 0.0 or x[i] > INVERSION_MAX:
            continue
        p = math.exp(-lam)
        cdf = p
        for k in range(kmax):
            table[i, k] = min(math.ceil(cdf * TWO53), 2**53)
            if 1.0 - cdf < 1e-17 and k >= lam:
                break
            p *= lam / (k + 1)
            cdf += p
    return table


@njit(**_opts)
def uniform(state, k):
    """k-th uniform in [0, 1) of a coordinate stream (53-bit resolution)."""
    return float(mix64(state + np.uint64(k) * G1) >> S11) * INV53


@njit(**_opts)
def poisson_draw(lam, table, i, state):
    """One Poisson(lam) variate.

    For ``lam <= INVERSION_MAX`` this is inversion by sequential search over
    row ``i`` of ``table`` (integer thresholds from :func:`poisson_cdf_table`); above it,
    Hormann's transformed rejection (PTRS).
    """
    if lam <= 0.0:
        return 0
    if lam <= INVERSION_MAX:
        u = mix64(state) >> S11
        k = 0
        while u >= table[i, k]:
            k += 1
        return k
    # transformed rejection (PTRS)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    j = 0
    while True:
        U = uniform(state, j) - 0.5
        V = uniform(state, j + 1)
        j += 2
        us = 0.5 - abs(U)
        k = math.floor((2.0 * a / us + b) * U + lam + 0.43)
        if us >= 0.07 and V <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return int(k)


@njit(**_opts)
def bernoulli_block(thr, key, trial0, ntrials, out):
    """Bernoulli outputs; ``thr = ceil(x * 2**53)`` so ``P(u53 < thr) = x`` exactly."""
    n = thr.size
    for t in range(ntrials):
        row = row_key(key, trial0 + t)
        for i in range(n):
            out[t, i] = 1 if (mix64(coord_state(row, i)) >> S11) < thr[i] else 0


@njit(**_opts)
def poisson_block(x, table, key, trial0, ntrials, out):
    n = x.size
    for t in range(ntrials):
        row = row_key(key, trial0 + t)
        for i in range(n):
            out[t, i] = poisson_draw(x[i], table, i, coord_state(row, i))


@njit(cache=True, nogil=True, fastmath=True)
def bernoulli_projection(thr, e, offset, key, trial0, ntrials, out):
    """``out[t] = <y_t, e> - offset`` without materialising ``y``."""
    n = thr.size
    for t in range(ntrials):
        row = row_key(key, trial0 + t)
        acc = 0.0
        for i in range(n):
            acc += e[i] if (mix64(coord_state(row, i)) >> S11) < thr[i] else 0.0
        out[t] = acc - offset


@njit(cache=True, nogil=True, fastmath=True)
def poisson_projection(x, table, e, offset, key, trial0, ntrials, out):
    n = x.size
    for t in range(ntrials):
        row = row_key(key, trial0 + t)
        acc = 0.0
        for i in range(n):
            state = coord_state(row, i)
            if x[i] <= INVERSION_MAX:
                # inlined copy of the inversion branch of poisson_draw
                u = mix64(state) >> S11
                k = 0
                while u >= table[i, k]:
                    k += 1
            else:
                k = poisson_draw(x[i], table, i, state)
            acc += k * e[i]
        out[t] = acc - offset
