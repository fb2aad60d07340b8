"""High-dimensional vector primitives.

Vectors are plain 1-D ``float64`` numpy arrays; a ``Subspace`` carries an
orthonormal basis stored as rows together with an affine base point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionUnderflow,
    DimMismatch,
    Infeasible,
    PlacementExhausted,
    RadiusMismatch,
    ZeroDirection,
)

TOL_ORTH = 1e-10
TOL_RADIUS = 1e-9
DEFAULT_MAX_ATTEMPTS = 1_000_000

_BATCH = 4096


def as_vec(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimMismatch(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite coordinates")
    return v


@dataclass(frozen=True)
class Subspace:
    """Affine subspace ``base_point + span(basis)``.

    ``basis`` has shape ``(k, ambient_dim)`` with orthonormal rows; ``k`` may be 0.
    """

    basis: np.ndarray
    base_point: np.ndarray

    def __post_init__(self):
        base = as_vec(self.base_point, "base_point")
        basis = np.asarray(self.basis, dtype=np.float64).reshape(-1, base.size)
        if basis.shape[0] > base.size:
            raise DimMismatch("more basis vectors than ambient dimensions")
        gram = basis @ basis.T
        if basis.shape[0] and np.max(np.abs(gram - np.eye(basis.shape[0]))) > TOL_ORTH:
            raise ValueError("basis rows are not orthonormal within tolerance")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "base_point", base)

    @property
    def ambient_dim(self) -> int:
        return self.base_point.size

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @classmethod
    def full(cls, base_point) -> "Subspace":
        base = as_vec(base_point, "base_point")
        return cls(np.eye(base.size), base)

    @classmethod
    def complement_of(cls, directions, base_point) -> "Subspace":
        """Orthogonal complement of ``span(directions)`` anchored at ``base_point``."""
        base = as_vec(base_point, "base_point")
        dirs = np.asarray(directions, dtype=np.float64).reshape(-1, base.size)
        m = dirs.shape[0]
        if m == 0:
            return cls.full(base)
        q, _ = np.linalg.qr(dirs.T, mode="complete")
        return cls(np.ascontiguousarray(q[:, m:].T), base)


@dataclass(frozen=True)
class ArrangementSpec:
    radius: float
    min_proj_dist: float
    count: int
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if not self.radius > 0 or not self.min_proj_dist > 0:
            raise ValueError("radius and min_proj_dist must be positive")
        if self.count < 1 or self.max_attempts < 1:
            raise ValueError("count and max_attempts must be >= 1")


@dataclass(frozen=True)
class AngleDenseReport:
    ok: bool
    min_sep: float
    violating_pair: tuple[int, int] | None = field(default=None)


def project_onto(z, v) -> tuple[float, float]:
    """Signed coefficient of ``z`` along the unit vector ``v/|v|`` and its magnitude."""
    z = as_vec(z, "z")
    v = as_vec(v, "v")
    if z.size != v.size:
        raise DimMismatch(f"dim(z)={z.size} != dim(v)={v.size}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroDirection("cannot project onto the zero vector")
    coef = float(z @ v) / norm
    return coef, abs(coef)


def min_separation_angle(r: float, d: float) -> float:
    """Smallest angle ``theta`` with ``r (1 - cos theta) = d``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if not d > 0:
        raise ValueError("projective distance must be positive")
    if d > 2 * r:
        raise Infeasible(f"projective distance {d:g} exceeds sphere diameter {2 * r:g}")
    return 2.0 * float(np.arcsin(np.sqrt(d / (2.0 * r))))


def _circle_arrangement(sub: Subspace, spec: ArrangementSpec, rng) -> np.ndarray:
    theta = min_separation_angle(spec.radius, spec.min_proj_dist)
    step = 2 * np.pi / spec.count
    if step < theta * (1 - 1e-12):
        raise PlacementExhausted(
            f"a circle holds at most {int(2 * np.pi / theta + 1e-12)} points "
            f"at separation {theta:.6g} rad, requested {spec.count}"
        )
    phases = rng.uniform(0.0, 2 * np.pi) + step * np.arange(spec.count)
    return np.column_stack([np.cos(phases), np.sin(phases)]) @ sub.basis


def _simplex_arrangement(sub: Subspace, spec: ArrangementSpec, rng) -> np.ndarray:
    # obtuse regime: at most 1 + 1/|cos_max| unit vectors have pairwise cosine <= cos_max,
    # and a regular simplex (pairwise cosine -1/(count-1)) attains that count
    cos_max = 1.0 - spec.min_proj_dist / spec.radius
    k = spec.count
    if k > sub.dim + 1 or -1.0 / (k - 1) > cos_max + 1e-12:
        limit = min(sub.dim + 1, int(1 + 1 / -cos_max + 1e-12))
        raise PlacementExhausted(
            f"at most {limit} points fit at pairwise cosine <= {cos_max:.6g}, requested {k}")
    verts = np.eye(k) - 1.0 / k
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    # orthonormal basis of the (k-1)-dim hyperplane sum(v) = 0, then a random embedding
    plane = np.linalg.qr(verts.T)[0][:, : k - 1]
    coords = verts @ plane
    frame = np.linalg.qr(rng.standard_normal((sub.dim, k - 1)))[0]
    return coords @ frame.T @ sub.basis


def _greedy_arrangement(sub: Subspace, spec: ArrangementSpec, rng) -> np.ndarray:
    # u_j accepted iff r(1 - <u_j, u_k>) >= d for every kept u_k
    cos_max = 1.0 - spec.min_proj_dist / spec.radius
    kept = np.empty((spec.count, sub.ambient_dim))
    n_kept = 0
    attempts = 0
    while n_kept < spec.count:
        batch = min(_BATCH, spec.max_attempts - attempts)
        g = rng.standard_normal((batch, sub.dim))
        cand = (g / np.linalg.norm(g, axis=1, keepdims=True)) @ sub.basis
        ok = np.all(cand @ kept[:n_kept].T <= cos_max, axis=1)
        pos = 0
        while n_kept < spec.count:
            hits = np.flatnonzero(ok[pos:])
            if hits.size == 0:
                attempts += batch - pos
                break
            idx = pos + hits[0]
            attempts = 0
            kept[n_kept] = cand[idx]
            n_kept += 1
            pos = idx + 1
            ok[pos:] &= cand[pos:] @ cand[idx] <= cos_max
        if n_kept < spec.count and attempts >= spec.max_attempts:
            raise PlacementExhausted(
                f"placed {n_kept}/{spec.count} points; {spec.max_attempts} attempts "
                f"failed for the next one (r={spec.radius:g}, d={spec.min_proj_dist:g})"
            )
    return kept


def generate_angle_dense(sub: Subspace, spec: ArrangementSpec, seed: int) -> np.ndarray:
    """Place ``spec.count`` points on the sphere of radius ``spec.radius`` in ``sub``.

    Greedy rejection sampling of uniform sphere directions.  Two cases where
    random greedy placement essentially never reaches a feasible count get an
    explicit configuration instead: a 2-dimensional subspace gets a regular
    polygon with a random phase, and an obtuse requirement (``d > r``, pairwise
    cosine below zero) gets a randomly oriented regular simplex.

    Returns an array of shape ``(count, ambient_dim)``.
    """
    if sub.dim < 2:
        raise DimensionUnderflow(f"need a subspace of dimension >= 2, got {sub.dim}")
    min_separation_angle(spec.radius, spec.min_proj_dist)
    rng = np.random.default_rng(seed)
    if spec.count == 1:
        g = rng.standard_normal(sub.dim)
        units = (g / np.linalg.norm(g))[None, :] @ sub.basis
    elif sub.dim == 2:
        units = _circle_arrangement(sub, spec, rng)
    elif spec.min_proj_dist > spec.radius:
        units = _simplex_arrangement(sub, spec, rng)
    else:
        units = _greedy_arrangement(sub, spec, rng)
    return sub.base_point + spec.radius * units


def projective_separations(rel: np.ndarray) -> np.ndarray:
    """Matrix ``S[k, j] = |Pi_{u_k} u_j - u_k|`` for rows ``u`` of ``rel``."""
    sq = np.einsum("ij,ij->i", rel, rel)
    coef = (rel @ rel.T) / sq[:, None]
    return np.abs(coef - 1.0) * np.sqrt(sq)[:, None]


def verify_angle_dense(center, points, d: float) -> AngleDenseReport:
    center = as_vec(center, "center")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, center.size)
    rel = pts - center
    radii = np.linalg.norm(rel, axis=1)
    if radii.size and (radii.min() == 0 or (radii.max() - radii.min()) > TOL_RADIUS * radii.max()):
        raise RadiusMismatch("points are not equidistant from the center")
    if len(pts) < 2:
        return AngleDenseReport(True, float("inf"), None)
    sep = projective_separations(rel)
    np.fill_diagonal(sep, np.inf)
    k, j = np.unravel_index(np.argmin(sep), sep.shape)
    min_sep = float(sep[k, j])
    ok = min_sep >= d * (1 - TOL_RADIUS)
    return AngleDenseReport(ok, min_sep, None if ok else (int(k), int(j)))


def haar_rotation(n: int, seed: int) -> np.ndarray:
    """Haar-distributed matrix in SO(n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
