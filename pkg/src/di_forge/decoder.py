"""Sequential layered projection decoder.

The receiver tests one hypothesised id: at every layer the output is projected
onto the layer direction (relative to the parent center) and compared with the
layer radius.  The id is accepted only if every layer passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codebook import PrimitiveCodebook
from .errors import DimMismatch, ZeroDirection
from .geometry import as_vec

MODES = ("capacity", "poisson", "rate_reliability", "custom")


@dataclass(frozen=True)
class DecoderParams:
    t: float
    mode: str = "custom"

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"acceptance radius t must be positive and finite, got {self.t}")
        if self.mode not in MODES:
            raise ValueError(f"unknown decoder mode {self.mode!r}")

    @classmethod
    def capacity(cls, n: int) -> "DecoderParams":
        return cls(math.log(n), "capacity")

    @classmethod
    def poisson(cls, n: int, A: float) -> "DecoderParams":
        return cls(A * math.log(n), "poisson")

    @classmethod
    def rate_reliability(cls, n: int, E: float) -> "DecoderParams":
        return cls(math.sqrt(n * E), "rate_reliability")

    def with_t(self, t: float) -> "DecoderParams":
        return DecoderParams(t, self.mode)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    failed_layer: int | None = None
    per_layer_distance: list[float] = field(default_factory=list)


def layer_test(y, parent_center, direction, t: float) -> tuple[bool, float]:
    """Distance of ``y`` from the layer center, measured along ``direction``.

    ``direction`` is the offset from the parent center to the layer center, so
    its norm is the layer radius.  Accepts on ``distance <= t``.
    """
    y = as_vec(y, "y")
    parent = as_vec(parent_center, "parent_center")
    v = as_vec(direction, "direction")
    if not y.size == parent.size == v.size:
        raise DimMismatch("y, parent_center and direction must share a dimension")
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise ZeroDirection("layer direction is the zero vector")
    dist = abs(float((y - parent) @ v) / r - r)
    return dist <= t, dist


def projected_distance(y, parent_center, direction) -> float:
    """Same quantity as :func:`layer_test` but via the full projected vector."""
    y = as_vec(y, "y")
    v = as_vec(direction, "direction")
    z = y - as_vec(parent_center, "parent_center")
    proj = (z @ v) / (v @ v) * v
    return float(np.linalg.norm(proj - v))


def identify(y, cb: PrimitiveCodebook, cid: Sequence[int], params: DecoderParams) -> Decision:
    nodes = cb.path_nodes(cid)
    y = as_vec(y, "y")
    if y.size != cb.n:
        raise DimMismatch(f"y has dim {y.size}, codebook n={cb.n}")
    dists: list[float] = []
    br = cb.params.branching
    for l, k in enumerate(nodes, start=1):
        parent = cb.layer_centers(l - 1)[k // br[l - 1]]
        ok, dist = layer_test(y, parent, cb.directions[l - 1][k], params.t)
        dists.append(dist)
        if not ok:
            return Decision(False, l, dists)
    return Decision(True, None, dists)


def layer_distances(Y: np.ndarray, cb: PrimitiveCodebook, cid: Sequence[int]) -> np.ndarray:
    """Per-layer distances for a batch of outputs; shape ``(len(Y), L)``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != cb.n:
        raise DimMismatch(f"expected outputs of shape (m, {cb.n}), got {Y.shape}")
    nodes = cb.path_nodes(cid)
    br = cb.params.branching
    E = np.array([cb.unit_directions(l)[k] for l, k in enumerate(nodes, start=1)])
    offsets = np.array([
        cb.layer_centers(l - 1)[k // br[l - 1]] @ E[l - 1] + cb.params.radii[l - 1]
        for l, k in enumerate(nodes, start=1)])
    return np.abs(Y @ E.T - offsets)


def identify_batch(Y, cb: PrimitiveCodebook, cid: Sequence[int], params: DecoderParams):
    """Vectorised :func:`identify`.

    Returns ``(accepted, failed_layer)``; ``failed_layer`` is 0 for accepted rows
    and otherwise the first failing layer (1-based).
    """
    passed = layer_distances(Y, cb, cid) <= params.t
    accepted = passed.all(axis=1)
    failed = np.where(accepted, 0, np.argmin(passed, axis=1) + 1)
    return accepted, failed
