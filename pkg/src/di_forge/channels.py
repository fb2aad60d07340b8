"""Memoryless Bernoulli, restricted-Bernoulli and peak-limited Poisson channels.

All sampling goes through the compiled kernels in ``_kernels``: the output for
(seed, trial, coordinate) is fixed, so batches can be split across worker
threads without changing any result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .codebook import InputBox
from .errors import DimMismatch, InputOutOfBox
from .geometry import as_vec

KINDS = ("bernoulli", "restricted", "poisson")
_SHARD = 4096


def seed_key(seed: int) -> np.uint64:
    """Map an integer seed to the 64-bit generator key."""
    return np.uint64(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])


def bernoulli_thresholds(x: np.ndarray) -> np.ndarray:
    """Integer thresholds with ``P(u53 < thr) = x`` for a 53-bit uniform ``u53``."""
    return np.ceil(x * K.TWO53).astype(np.uint64)


def worker_count() -> int:
    env = os.environ.get("DI_FORGE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sharded(fn: Callable[[int, int], None], trials: int, shard: int = _SHARD) -> None:
    """Call ``fn(start, count)`` over ``range(trials)`` in shards, possibly in parallel."""
    starts = range(0, trials, shard)
    workers = min(worker_count(), len(starts))
    if workers <= 1:
        for s in starts:
            fn(s, min(shard, trials - s))
        return
    with ThreadPoolExecutor(workers) as pool:
        list(pool.map(lambda s: fn(s, min(shard, trials - s)), starts))


@dataclass(frozen=True)
class ChannelModel:
    kind: str
    a: float = 0.0
    b: float = 1.0
    A: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "restricted" and not 0 <= self.a < self.b <= 1:
            raise ValueError("restricted Bernoulli needs 0 <= a < b <= 1")
        if self.kind == "poisson" and not self.A > 0:
            raise ValueError("Poisson peak constraint A must be positive")

    @classmethod
    def bernoulli(cls) -> "ChannelModel":
        return cls("bernoulli")

    @classmethod
    def restricted(cls, a: float, b: float) -> "ChannelModel":
        return cls("restricted", a=a, b=b)

    @classmethod
    def poisson(cls, A: float) -> "ChannelModel":
        return cls("poisson", A=A)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "bernoulli":
            return 0.0, 1.0
        if self.kind == "restricted":
            return self.a, self.b
        return 0.0, self.A

    def input_box(self, n: int) -> InputBox:
        lo, hi = self.bounds
        return InputBox(lo, hi, n)

    def check_input(self, x) -> np.ndarray:
        x = as_vec(x, "x")
        lo, hi = self.bounds
        bad = np.flatnonzero((x < lo) | (x > hi))
        if bad.size:
            raise InputOutOfBox(
                f"{bad.size} input letters outside [{lo:g}, {hi:g}] (first at index {bad[0]}: {x[bad[0]]:g})")
        return x

    def sample(self, x, seed: int, trial0: int = 0, ntrials: int = 1) -> np.ndarray:
        """Outputs for trials ``trial0 .. trial0+ntrials-1``; shape ``(ntrials, n)``."""
        x = self.check_input(x)
        key = seed_key(seed)
        if self.kind == "poisson":
            out = np.empty((ntrials, x.size), dtype=np.int64)
            table = K.poisson_cdf_table(x)
            run_sharded(lambda s, c: K.poisson_block(x, table, key, trial0 + s, c, out[s:s + c]),
                        ntrials)
        else:
            out = np.empty((ntrials, x.size), dtype=np.uint8)
            thr = bernoulli_thresholds(x)
            run_sharded(lambda s, c: K.bernoulli_block(thr, key, trial0 + s, c, out[s:s + c]),
                        ntrials)
        return out

    def noise_projection(self, x, direction, seed: int, ntrials: int, trial0: int = 0) -> np.ndarray:
        """``<Y_t - x, e>`` for ``ntrials`` independent outputs, ``e`` the unit direction."""
        x = self.check_input(x)
        e = as_vec(direction, "direction")
        if e.size != x.size:
            raise DimMismatch("direction and x differ in dimension")
        e = e / np.linalg.norm(e)
        key = seed_key(seed)
        offset = float(x @ e)
        out = np.empty(ntrials)
        if self.kind == "poisson":
            table = K.poisson_cdf_table(x)
            run_sharded(lambda s, c: K.poisson_projection(
                x, table, e, offset, key, trial0 + s, c, out[s:s + c]), ntrials)
        else:
            thr = bernoulli_thresholds(x)
            run_sharded(lambda s, c: K.bernoulli_projection(
                thr, e, offset, key, trial0 + s, c, out[s:s + c]), ntrials)
        return out


def transmit(ch: ChannelModel, x, seed: int) -> np.ndarray:
    return ch.sample(x, seed, 0, 1)[0].astype(np.float64)


def noise_of(y, x) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise DimMismatch(f"y has shape {y.shape}, x has shape {x.shape}")
    return y - x


@dataclass(frozen=True)
class ReductionSpec:
    """Binary post-processing of Poisson counts: ``V(y) = 1{y = 0}``, so ``p(x) = exp(-x)``."""

    A: float

    @property
    def interval(self) -> tuple[float, float]:
        return math.exp(-self.A), 1.0

    @staticmethod
    def post_process(y):
        return (np.asarray(y) == 0).astype(np.uint8)

    @staticmethod
    def induced_param(x):
        return np.exp(-np.asarray(x, dtype=np.float64))

    def input_for(self, q):
        """Poisson intensity realising Bernoulli parameter ``q`` (inverse of ``induced_param``)."""
        q = np.asarray(q, dtype=np.float64)
        a, b = self.interval
        if np.any((q < a) | (q > b)):
            raise InputOutOfBox(f"Bernoulli parameter outside [{a:g}, {b:g}]")
        return np.minimum(-np.log(q), self.A)


def poisson_to_bernoulli_reduction(A: float) -> ReductionSpec:
    if not A > 0:
        raise ValueError("A must be positive")
    return ReductionSpec(float(A))


def apply_reduction(spec: ReductionSpec, raw_y) -> np.ndarray:
    return spec.post_process(raw_y)


@dataclass(frozen=True)
class ReducedChannel:
    """Restricted Bernoulli channel on ``[exp(-A), 1]`` simulated through a Poisson channel.

    Accepts Bernoulli parameters as inputs, feeds ``-ln q`` into Poisson(A), and
    post-processes the counts.  Duck-types the ``ChannelModel`` sampling surface.
    """

    spec: ReductionSpec

    @property
    def kind(self) -> str:
        return "reduced"

    @property
    def bounds(self) -> tuple[float, float]:
        return self.spec.interval

    def input_box(self, n: int) -> InputBox:
        lo, hi = self.bounds
        return InputBox(lo, hi, n)

    def check_input(self, q) -> np.ndarray:
        q = as_vec(q, "q")
        self.spec.input_for(q)
        return q

    def sample(self, q, seed: int, trial0: int = 0, ntrials: int = 1) -> np.ndarray:
        x = self.spec.input_for(as_vec(q, "q"))
        raw = ChannelModel.poisson(self.spec.A).sample(x, seed, trial0, ntrials)
        return apply_reduction(self.spec, raw)


@dataclass(frozen=True)
class NoiselessChannel:
    """Output equals input; useful as a stub when checking decoder geometry."""

    lo: float = 0.0
    hi: float = 1.0

    @property
    def kind(self) -> str:
        return "noiseless"

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lo, self.hi

    def input_box(self, n: int) -> InputBox:
        return InputBox(self.lo, self.hi, n)

    def check_input(self, x) -> np.ndarray:
        x = as_vec(x, "x")
        if np.any((x < self.lo) | (x > self.hi)):
            raise InputOutOfBox(f"input letters outside [{self.lo:g}, {self.hi:g}]")
        return x

    def sample(self, x, seed: int, trial0: int = 0, ntrials: int = 1) -> np.ndarray:
        x = self.check_input(x)
        return np.broadcast_to(x, (ntrials, x.size)).copy()
