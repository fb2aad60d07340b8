"""Multi-layer primitive codebook: construction, separation checks, expurgation.

Nodes at layer ``l`` are stored in lexicographic order of their index paths,
so every node owns a contiguous block of leaves and its parent is found by
integer division.  Codeword ids are 1-based tuples ``(s_1, ..., s_L)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DimensionUnderflow, DimMismatch, TooFewWords, UnknownId
from .geometry import (
    DEFAULT_MAX_ATTEMPTS,
    ArrangementSpec,
    Subspace,
    as_vec,
    generate_angle_dense,
    haar_rotation,
    min_separation_angle,
)

SCHEMA_VERSION = 1

CodewordId = tuple[int, ...]


@dataclass(frozen=True)
class CodebookParams:
    n: int
    L: int
    delta: float
    radii: tuple[float, ...]
    min_proj_dist: float
    branching: tuple[int, ...]
    seed: int = 0
    mode: str = "custom"
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        if self.n < 2 or self.L < 1:
            raise ValueError("need n >= 2 and L >= 1")
        if self.L > self.n - 1:
            raise DimensionUnderflow(f"L={self.L} layers need n >= L + 1, got n={self.n}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if len(self.radii) != self.L or len(self.branching) != self.L:
            raise ValueError("radii and branching need exactly L entries")
        if any(r <= 0 for r in self.radii) or any(b < 1 for b in self.branching):
            raise ValueError("radii must be positive and branching >= 1")
        if any(a <= b for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly decreasing")
        if not self.min_proj_dist > 0:
            raise ValueError("min_proj_dist must be positive")

    @property
    def d(self) -> float:
        return self.min_proj_dist

    @property
    def size(self) -> int:
        return math.prod(self.branching)

    @classmethod
    def capacity(cls, n, L, delta, branching, seed=0, **kw) -> "CodebookParams":
        """Radii ``n^((1-delta)/2^l)`` and ``d = 3 ln n``."""
        return cls(n, L, delta, capacity_radii(n, L, delta), 3 * math.log(n),
                   tuple(branching), seed, mode="capacity", **kw)

    @classmethod
    def desk(cls, n, L, delta, branching, seed=0, d=None, inner=1.0, **kw) -> "CodebookParams":
        """``d = 3 ln n`` (unless given) with radii from :func:`desk_radii`."""
        d = 3 * math.log(n) if d is None else float(d)
        return cls(n, L, delta, desk_radii(d, L, inner), d, tuple(branching), seed,
                   mode="desk", **kw)


def capacity_radii(n: int, L: int, delta: float) -> tuple[float, ...]:
    return tuple(n ** ((1 - delta) / 2**l) for l in range(1, L + 1))


def desk_radii(d: float, L: int, inner: float = 1.0) -> tuple[float, ...]:
    """Radii for which small blocks still meet the ``d - sqrt(2 L d)`` separation.

    The innermost radius is ``inner * d``; each outer radius is at least
    ``sum_{j>l} r_j^2 / L`` so that ``Delta <= sqrt(2 L d)`` at the minimum
    angle, and at least twice the next radius.
    """
    if inner < 0.5:
        raise ValueError("inner radius below d/2 cannot host two points")
    radii = [inner * d]
    for _ in range(L - 1):
        tail = sum(r * r for r in radii)
        radii.insert(0, max(tail / L, 2 * radii[0]))
    return tuple(radii)


class Node(NamedTuple):
    path: CodewordId
    center: np.ndarray
    direction: np.ndarray
    parent_center: np.ndarray
    children: list


@dataclass(frozen=True, eq=False)
class PrimitiveCodebook:
    params: CodebookParams
    center: np.ndarray
    directions: tuple[np.ndarray, ...]
    _centers: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        centers = [self.center[None, :]]
        for l, dirs in enumerate(self.directions):
            parent = centers[-1][np.arange(dirs.shape[0]) // self.params.branching[l]]
            centers.append(parent + dirs)
        object.__setattr__(self, "_centers", tuple(centers))

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def L(self) -> int:
        return self.params.L

    def __len__(self) -> int:
        return self.params.size

    def layer_centers(self, layer: int) -> np.ndarray:
        """Centers ``o_{s^l}`` of every layer-``layer`` node; layer 0 is the codebook center."""
        return self._centers[layer]

    @property
    def codewords(self) -> np.ndarray:
        return self._centers[self.L]

    def unit_directions(self, layer: int) -> np.ndarray:
        dirs = self.directions[layer - 1]
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    @property
    def leaf_ids(self) -> list[CodewordId]:
        return [tuple(int(i) + 1 for i in idx) for idx in np.ndindex(*self.params.branching)]

    def node_index(self, path: Sequence[int]) -> int:
        idx = 0
        for l, s in enumerate(path):
            if not 1 <= s <= self.params.branching[l]:
                raise UnknownId(f"index {s} at layer {l + 1} outside 1..{self.params.branching[l]}")
            idx = idx * self.params.branching[l] + (s - 1)
        return idx

    def leaf_index(self, cid: Sequence[int]) -> int:
        if len(cid) != self.L:
            raise UnknownId(f"id {tuple(cid)} has {len(cid)} entries, expected {self.L}")
        return self.node_index(cid)

    def leaf_id(self, index: int) -> CodewordId:
        if not 0 <= index < len(self):
            raise UnknownId(f"leaf index {index} out of range")
        return tuple(int(i) + 1 for i in np.unravel_index(index, self.params.branching))

    def path_nodes(self, cid: Sequence[int]) -> list[int]:
        """Node index at each layer 1..L along the path of ``cid``."""
        self.leaf_index(cid)
        return [self.node_index(cid[: l + 1]) for l in range(self.L)]

    def node(self, path: Sequence[int]) -> Node:
        layer = len(path)
        if not 1 <= layer <= self.L:
            raise UnknownId("node path must have between 1 and L entries")
        k = self.node_index(path)
        children = []
        if layer < self.L:
            children = [tuple(path) + (s,) for s in range(1, self.params.branching[layer] + 1)]
        return Node(tuple(path), self._centers[layer][k], self.directions[layer - 1][k],
                    self._centers[layer - 1][k // self.params.branching[layer - 1]], children)

    def ancestor_units(self, path: Sequence[int]) -> np.ndarray:
        """Unit directions along ``path`` (shape ``(len(path), n)``)."""
        rows = [self.unit_directions(l + 1)[self.node_index(path[: l + 1])] for l in range(len(path))]
        return np.array(rows).reshape(len(path), self.n)

    def complement(self, path: Sequence[int]) -> Subspace:
        """Subspace hosting the children of ``path`` (empty path = whole space)."""
        k = self.node_index(path) if path else 0
        return Subspace.complement_of(self.ancestor_units(path), self._centers[len(path)][k])


def _node_seed(seed: int, layer: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, layer, index]).generate_state(1, np.uint64)[0])


def build_primitive(params: CodebookParams, center=None) -> PrimitiveCodebook:
    """Build the tree layer by layer; each arrangement lives in the complement of its ancestors."""
    n = params.n
    center = np.full(n, 0.5) if center is None else as_vec(center, "center")
    if center.size != n:
        raise DimMismatch(f"center has dim {center.size}, expected {n}")
    for r in params.radii:
        min_separation_angle(r, params.d)

    directions: list[np.ndarray] = []
    prev_units = np.zeros((1, 0, n))
    centers = center[None, :]
    for l in range(params.L):
        spec = ArrangementSpec(params.radii[l], params.d, params.branching[l], params.max_attempts)
        n_parent = centers.shape[0]
        dirs = np.empty((n_parent * spec.count, n))
        for k in range(n_parent):
            sub = Subspace.complement_of(prev_units[k], np.zeros(n))
            dirs[k * spec.count:(k + 1) * spec.count] = generate_angle_dense(
                sub, spec, _node_seed(params.seed, l + 1, k))
        directions.append(dirs)
        units = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        prev_units = np.concatenate(
            [np.repeat(prev_units, spec.count, axis=0), units[:, None, :]], axis=1)
        centers = np.repeat(centers, spec.count, axis=0) + dirs
    return PrimitiveCodebook(params, center, tuple(directions))


def codeword_vector(cb: PrimitiveCodebook, cid: Sequence[int]) -> np.ndarray:
    return cb.codewords[cb.leaf_index(cid)].copy()


@dataclass(frozen=True)
class SeparationReport:
    min_sep: float
    bound: float
    tested_id: CodewordId | None
    sent_id: CodewordId | None
    layer: int | None
    pairs_checked: int


def separation_bound(d: float, L: int) -> float:
    return d - math.sqrt(2 * L * d)


def _first_diff_layer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.argmax(a != b, axis=-1) + 1


def pairwise_projective_separation(cb: PrimitiveCodebook, sample_pairs: int | None = None,
                                   ids: Iterable[Sequence[int]] | None = None,
                                   seed: int = 0) -> SeparationReport:
    """Minimum over ordered leaf pairs of the projected distance at the first differing layer.

    For tested word ``s`` and other word ``w`` differing first at layer ``l`` the
    quantity is ``| <w - o_{s^{l-1}}, e_l(s)> - r_l |``.  ``ids`` restricts both
    members of every pair to a subset (e.g. the retained words).
    """
    br = cb.params.branching
    subset = (np.arange(len(cb)) if ids is None
              else np.array(sorted({cb.leaf_index(i) for i in ids}), dtype=np.int64))
    if subset.size < 2:
        raise TooFewWords("need at least two codewords")
    W = cb.codewords
    paths = np.array(np.unravel_index(subset, br)).T  # 0-based digits
    best = (math.inf, None, None, None)
    checked = 0

    if sample_pairs is not None:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, subset.size, sample_pairs)
        j = (i + rng.integers(1, subset.size, sample_pairs)) % subset.size
        layer = _first_diff_layer(paths[i], paths[j])
        for l in range(1, cb.L + 1):
            m = layer == l
            if not m.any():
                continue
            node = np.ravel_multi_index(paths[i][m, :l].T, br[:l]) if l else 0
            parent = node // br[l - 1]
            e = cb.unit_directions(l)[node]
            rel = W[subset[j[m]]] - cb.layer_centers(l - 1)[parent]
            sep = np.abs(np.einsum("ij,ij->i", rel, e) - cb.params.radii[l - 1])
            checked += sep.size
            a = int(np.argmin(sep))
            if sep[a] < best[0]:
                best = (float(sep[a]), subset[i[m][a]], subset[j[m][a]], l)
    else:
        for l in range(1, cb.L + 1):
            block = math.prod(br[l:])
            parent_block = block * br[l - 1]
            nodes = np.unique(subset // block)
            e_all = cb.unit_directions(l)
            for node in nodes:
                parent = node // br[l - 1]
                lo, hi = parent * parent_block, (parent + 1) * parent_block
                others = subset[(subset >= lo) & (subset < hi) & (subset // block != node)]
                if others.size == 0:
                    continue
                rel = W[others] - cb.layer_centers(l - 1)[parent]
                sep = np.abs(rel @ e_all[node] - cb.params.radii[l - 1])
                checked += sep.size * int(np.count_nonzero(subset // block == node))
                a = int(np.argmin(sep))
                if sep[a] < best[0]:
                    tested = subset[subset // block == node][0]
                    best = (float(sep[a]), tested, others[a], l)

    min_sep, ti, si, layer = best
    return SeparationReport(
        min_sep, separation_bound(cb.params.d, cb.L),
        None if ti is None else cb.leaf_id(int(ti)),
        None if si is None else cb.leaf_id(int(si)),
        layer, checked)


@dataclass(frozen=True)
class InputBox:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("box needs lo < hi")

    @property
    def center(self) -> np.ndarray:
        return np.full(self.n, (self.lo + self.hi) / 2)

    @property
    def side(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((x >= self.lo) & (x <= self.hi)))

    def contains_rows(self, X) -> np.ndarray:
        X = np.asarray(X)
        return np.all((X >= self.lo) & (X <= self.hi), axis=-1)


@dataclass(frozen=True)
class ExpurgationReport:
    total: int
    retained: int
    fraction_out: float
    rotation_seed: int | None

    @property
    def out(self) -> int:
        return self.total - self.retained


def rotate_codebook(cb: PrimitiveCodebook, Q: np.ndarray) -> PrimitiveCodebook:
    """Apply the orthogonal map ``Q`` about the codebook center."""
    return PrimitiveCodebook(cb.params, cb.center.copy(), tuple(d @ Q.T for d in cb.directions))


def expurgate(cb: PrimitiveCodebook, box: InputBox, rotation_seed: int | None = None,
              use_rotation: bool = True) -> tuple[list[CodewordId], ExpurgationReport]:
    if box.n != cb.n:
        raise DimMismatch(f"box has n={box.n}, codebook n={cb.n}")
    if use_rotation:
        if rotation_seed is None:
            raise ValueError("rotation_seed is required when use_rotation is set")
        cb = rotate_codebook(cb, haar_rotation(cb.n, rotation_seed))
    inside = box.contains_rows(cb.codewords)
    retained = [cb.leaf_id(int(i)) for i in np.flatnonzero(inside)]
    total = len(cb)
    report = ExpurgationReport(total, len(retained), 1 - len(retained) / total,
                               rotation_seed if use_rotation else None)
    return retained, report


def expurgated_code(cb: PrimitiveCodebook, box: InputBox, rotation_seed: int | None = None,
                    use_rotation: bool = True):
    """Like :func:`expurgate` but also returns the (rotated) codebook the ids refer to."""
    retained, report = expurgate(cb, box, rotation_seed, use_rotation)
    if use_rotation:
        cb = rotate_codebook(cb, haar_rotation(cb.n, rotation_seed))
    return cb, retained, report


def best_rotation(cb: PrimitiveCodebook, box: InputBox, seeds: Iterable[int]):
    """Try several rotation seeds and keep the one retaining the most words."""
    best = None
    for s in seeds:
        result = expurgated_code(cb, box, s, True)
        if best is None or result[2].retained > best[2].retained:
            best = result
    return best


def affine_map(cb: PrimitiveCodebook, scale: float, new_center) -> PrimitiveCodebook:
    if not scale > 0:
        raise ValueError("scale must be positive")
    new_center = as_vec(new_center, "new_center")
    if new_center.size != cb.n:
        raise DimMismatch(f"new_center has dim {new_center.size}, expected {cb.n}")
    p = cb.params
    params = replace(p, radii=tuple(r * scale for r in p.radii), min_proj_dist=p.d * scale)
    return PrimitiveCodebook(params, new_center.copy(), tuple(d * scale for d in cb.directions))


def vertex_distance_sq(vertex) -> float:
    """Squared distance from a cube vertex to the cube center ``(1/2, ..., 1/2)``."""
    v = np.asarray(vertex, dtype=np.float64)
    return float(np.sum((v - 0.5) ** 2))


def to_json(cb: PrimitiveCodebook) -> dict:
    p = cb.params
    nodes = []
    for l in range(1, cb.L + 1):
        for k, vec in enumerate(cb.directions[l - 1]):
            digits = np.unravel_index(k, p.branching[:l])
            nodes.append({"id_path": [int(s) + 1 for s in digits],
                          "direction": [float(x) for x in vec]})
    return {
        "schema_version": SCHEMA_VERSION,
        "params": {"n": p.n, "L": p.L, "delta": p.delta, "radii": list(p.radii),
                   "d": p.d, "branching": list(p.branching), "seed": p.seed, "mode": p.mode},
        "center": [float(x) for x in cb.center],
        "nodes": nodes,
    }


def from_json(doc: dict) -> PrimitiveCodebook:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported codebook schema_version {doc.get('schema_version')!r}")
    q = doc["params"]
    params = CodebookParams(q["n"], q["L"], q["delta"], tuple(q["radii"]), q["d"],
                            tuple(q["branching"]), q.get("seed", 0), q.get("mode", "custom"))
    directions = [np.empty((math.prod(params.branching[:l]), params.n)) for l in range(1, params.L + 1)]
    seen = [np.zeros(len(d), dtype=bool) for d in directions]
    for node in doc["nodes"]:
        path = node["id_path"]
        l = len(path)
        k = int(np.ravel_multi_index([s - 1 for s in path], params.branching[:l]))
        directions[l - 1][k] = node["direction"]
        seen[l - 1][k] = True
    if not all(s.all() for s in seen):
        raise ValueError("codebook document is missing nodes")
    return PrimitiveCodebook(params, as_vec(doc["center"], "center"), tuple(directions))
