"""Geometric foundations: point clouds, triangle meshes, rigid transforms,
spatial queries, surface sampling and local differential estimates.

All coordinates are in model units; the CLI and reports treat them as
millimeters. Every type is immutable after construction, so instances can be
shared freely across threads.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, replace
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

Vec3: TypeAlias = NDArray[np.float64]    # shape (3,)
Points: TypeAlias = NDArray[np.float64]  # shape (N, 3)
Mat3: TypeAlias = NDArray[np.float64]    # shape (3, 3)

UNIT_TOL = 1e-6
ORTHO_TOL = 1e-9


class DegenerateNeighborhoodWarning(UserWarning):
    """Raised when a point neighborhood carries no usable surface information."""


def as_points(a) -> Points:
    """Coerce array-like input to a contiguous float64 (N, 3) array."""
    pts = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if pts.ndim == 1:
        if pts.size != 3:
            raise ValueError(f"expected 3 coordinates, got {pts.size}")
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
    return pts


def as_vec3(a) -> Vec3:
    v = np.asarray(a, dtype=np.float64).reshape(3)
    return v


def unit(v) -> Vec3:
    v = as_vec3(v)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def canonical_sign(v: Vec3) -> Vec3:
    """Flip ``v`` so its first nonzero component in (z, y, x) order is positive."""
    v = as_vec3(v)
    for c in (2, 1, 0):
        if v[c] > 0.0:
            return v
        if v[c] < 0.0:
            return -v
    return v


# ---------------------------------------------------------------------------
# Core carriers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point channels.

    Optional channels must match the point count. Normals are unit length;
    the label -1 marks unassigned/outlier points.
    """

    points: Points
    normals: Points | None = None
    curvatures: NDArray[np.float64] | None = None
    labels: NDArray[np.int64] | None = None

    def __post_init__(self):
        pts = as_points(self.points)
        if len(pts) == 0:
            raise ValueError("point cloud is empty")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.normals is not None:
            nrm = as_points(self.normals)
            if len(nrm) != n:
                raise ValueError("normals length does not match point count")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.abs(lengths - 1.0).max() > UNIT_TOL:
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)
        if self.curvatures is not None:
            cur = np.asarray(self.curvatures, dtype=np.float64).reshape(-1)
            if len(cur) != n:
                raise ValueError("curvatures length does not match point count")
            if (cur < 0).any():
                raise ValueError("curvatures must be non-negative")
            object.__setattr__(self, "curvatures", cur)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(lab) != n:
                raise ValueError("labels length does not match point count")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, which) -> "PointCloud":
        """Sub-cloud for an index array or boolean mask, keeping all channels."""
        return PointCloud(
            points=self.points[which],
            normals=None if self.normals is None else self.normals[which],
            curvatures=None if self.curvatures is None else self.curvatures[which],
            labels=None if self.labels is None else self.labels[which],
        )

    def transformed(self, t: "RigidTransform") -> "PointCloud":
        return replace(
            self,
            points=t.apply(self.points),
            normals=None if self.normals is None else t.apply_directions(self.normals),
        )

    def bbox_diagonal(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh used as the reference CAD geometry."""

    vertices: Points
    triangles: NDArray[np.int64]

    def __post_init__(self):
        self.vertices = as_points(self.vertices)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"expected (T, 3) triangle indices, got {tris.shape}")
        if len(tris) == 0:
            raise ValueError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        areas = _triangle_areas(self.vertices, tris)
        if (areas == 0.0).any():
            raise ValueError("mesh contains degenerate (zero-area) triangles")
        self.triangles = tris
        self._distance_index: MeshDistance | None = None

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def triangle_vertices(self) -> NDArray[np.float64]:
        """Per-triangle corner coordinates, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self) -> NDArray[np.float64]:
        return _triangle_areas(self.vertices, self.triangles)

    def surface_area(self) -> float:
        return float(self.areas().sum())

    def bbox_diagonal(self) -> float:
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def distance_index(self) -> "MeshDistance":
        """Lazy shared acceleration structure for exact surface distances."""
        if self._distance_index is None:
            self._distance_index = MeshDistance(self)
        return self._distance_index


def _triangle_areas(vertices: Points, triangles: NDArray[np.int64]) -> NDArray[np.float64]:
    tv = vertices[triangles]
    cross = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def clean_triangles(vertices: Points, triangles) -> NDArray[np.int64]:
    """Drop index-degenerate and zero-area triangles; used by all loaders."""
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    ok = (
        (tris[:, 0] != tris[:, 1])
        & (tris[:, 1] != tris[:, 2])
        & (tris[:, 0] != tris[:, 2])
    )
    tris = tris[ok]
    if len(tris) == 0:
        return tris
    areas = _triangle_areas(as_points(vertices), tris)
    return tris[areas > 0.0]


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion: x -> R x + t with R orthonormal, det(R) = +1."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = as_vec3(self.translation)
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(float(np.linalg.det(r)) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points) -> Points:
        return as_points(points) @ self.rotation.T + self.translation

    def apply_directions(self, dirs) -> Points:
        return as_points(dirs) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return RigidTransform(m[:3, :3], m[:3, 3])


# ---------------------------------------------------------------------------
# Spatial queries
# ---------------------------------------------------------------------------

class SpatialIndex:
    """Exact k-NN and radius queries over a fixed point set (kd-tree backed)."""

    def __init__(self, points):
        self._points = as_points(points)
        self._tree = cKDTree(self._points)

    @property
    def points(self) -> Points:
        return self._points

    def __len__(self) -> int:
        return len(self._points)

    def knn(self, query, k: int):
        """Distances and indices of the true k nearest points to each query."""
        if k < 1 or k > len(self._points):
            raise ValueError(f"k must be in [1, {len(self._points)}]")
        d, i = self._tree.query(as_points(query), k=k)
        if k == 1:
            d = d[:, None]
            i = i[:, None]
        return d, i

    def radius(self, query, r: float) -> list[list[int]]:
        """Indices of all points within ``r`` of each query point (inclusive)."""
        q = as_points(query)
        return self._tree.query_ball_point(q, r)

    @property
    def tree(self) -> cKDTree:
        return self._tree


def median_spacing(points) -> float:
    """Median nearest-neighbor distance; the cloud's intrinsic resolution."""
    pts = as_points(points)
    if len(pts) < 2:
        return 0.0
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]))


# ---------------------------------------------------------------------------
# Mesh sampling and exact surface distance
# ---------------------------------------------------------------------------

def sample_mesh(mesh: TriangleMesh, count: int, seed: int = 0) -> PointCloud:
    """Sample ``count`` points uniformly by area over the mesh surface.

    Deterministic for a fixed seed: identical calls return identical clouds.
    """
    if count < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    tri_idx = rng.choice(len(mesh), size=count, p=areas / areas.sum())
    tv = mesh.triangle_vertices[tri_idx]
    # Square-root reparameterization gives a uniform density over each triangle.
    r = np.sqrt(rng.random(count))
    s = rng.random(count)
    a = (1.0 - r)[:, None]
    b = (r * (1.0 - s))[:, None]
    c = (r * s)[:, None]
    pts = a * tv[:, 0] + b * tv[:, 1] + c * tv[:, 2]
    return PointCloud(points=pts)


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to query points ``p``.

    All arguments broadcast against each other with a trailing axis of 3.
    Implements the standard seven-region case analysis, applied in reverse
    priority order so earlier regions win.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        den = np.where(den == 0.0, 1.0, den)
        return num / den

    # Face interior (lowest priority).
    denom = safe_div(np.ones_like(va), va + vb + vc)
    v = vb * denom
    w = vc * denom
    closest = a + ab * v[..., None] + ac * w[..., None]
    # Edge BC.
    t = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    closest = np.where(m[..., None], b + (c - b) * t[..., None], closest)
    # Edge AC.
    t = safe_div(d2, d2 - d6)
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    closest = np.where(m[..., None], a + ac * t[..., None], closest)
    # Vertex C.
    m = (d6 >= 0) & (d5 <= d6)
    closest = np.where(m[..., None], c, closest)
    # Edge AB.
    t = safe_div(d1, d1 - d3)
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    closest = np.where(m[..., None], a + ab * t[..., None], closest)
    # Vertex B.
    m = (d3 >= 0) & (d4 <= d3)
    closest = np.where(m[..., None], b, closest)
    # Vertex A (highest priority).
    m = (d1 <= 0) & (d2 <= 0)
    closest = np.where(m[..., None], a, closest)
    return closest


class MeshDistance:
    """Exact point-to-surface distance with a centroid kd-tree accelerator.

    Candidate triangles come from the nearest centroids; a bounded fix-up pass
    re-examines every triangle that could still beat the current best, so the
    result equals the brute-force minimum over all triangles. Oversized
    triangles are split (same surface, finer pieces) so one large facet cannot
    poison the candidate bound for the whole mesh.
    """

    def __init__(self, mesh: TriangleMesh, candidates: int = 16):
        self._tri = _subdivide_for_queries(mesh.triangle_vertices)
        cent = self._tri.mean(axis=1)
        self._tri_radius = np.linalg.norm(self._tri - cent[:, None, :], axis=2).max(axis=1)
        self._rmax = float(self._tri_radius.max())
        self._tree = cKDTree(cent)
        self._k = min(candidates, len(self._tri))

    def query(self, points, chunk: int = 20000) -> NDArray[np.float64]:
        pts = as_points(points)
        out = np.empty(len(pts))
        for lo in range(0, len(pts), chunk):
            hi = min(lo + chunk, len(pts))
            out[lo:hi] = self._query_chunk(pts[lo:hi])
        return out

    def query_one(self, point) -> float:
        return float(self.query(as_points(point))[0])

    def _query_chunk(self, pts: Points) -> NDArray[np.float64]:
        k = self._k
        dc, idx = self._tree.query(pts, k=k)
        if k == 1:
            dc = dc[:, None]
            idx = idx[:, None]
        tri = self._tri[idx]
        cp = _closest_on_triangles(pts[:, None, :], tri[:, :, 0], tri[:, :, 1], tri[:, :, 2])
        best = np.linalg.norm(cp - pts[:, None, :], axis=-1).min(axis=1)
        if k == len(self._tri):
            return best
        # A triangle outside the candidate set is at least (centroid distance
        # - tri_radius) away; re-check the points where that bound bites.
        risky = np.nonzero(best > dc[:, -1] - self._rmax)[0]
        for i in risky:
            cand = self._tree.query_ball_point(pts[i], best[i] + self._rmax)
            tri = self._tri[cand]
            cp = _closest_on_triangles(pts[i], tri[:, 0], tri[:, 1], tri[:, 2])
            d = np.linalg.norm(cp - pts[i], axis=-1)
            if len(d):
                best[i] = min(best[i], float(d.min()))
        return best


def _subdivide_for_queries(tri: NDArray[np.float64], max_count: int = 400_000) -> NDArray[np.float64]:
    """Longest-edge bisection of oversized triangles (acceleration only)."""
    cent = tri.mean(axis=1)
    radius = np.linalg.norm(tri - cent[:, None, :], axis=2).max(axis=1)
    limit = 4.0 * float(np.median(radius))
    if limit <= 0:
        return tri
    work = list(tri)
    out = []
    while work and len(work) + len(out) < max_count:
        t = work.pop()
        edges = [np.linalg.norm(t[1] - t[0]), np.linalg.norm(t[2] - t[1]),
                 np.linalg.norm(t[0] - t[2])]
        c = t.mean(axis=0)
        if np.linalg.norm(t - c, axis=1).max() <= limit:
            out.append(t)
            continue
        e = int(np.argmax(edges))
        a, b = e, (e + 1) % 3
        other = (e + 2) % 3
        mid = 0.5 * (t[a] + t[b])
        work.append(np.stack([t[a], mid, t[other]]))
        work.append(np.stack([mid, t[b], t[other]]))
    out.extend(work)
    return np.stack(out)


def point_to_mesh_distance(p, mesh: TriangleMesh) -> float:
    """Exact Euclidean distance from one point to the mesh surface."""
    return mesh.distance_index().query_one(p)


# ---------------------------------------------------------------------------
# Local surface estimates and pre-filtering
# ---------------------------------------------------------------------------

def estimate_normals_and_curvature(cloud: PointCloud, k: int = 16) -> PointCloud:
    """Attach PCA normals and surface-variation curvature to a cloud.

    The normal at a point is the smallest-eigenvalue direction of its
    (k+1)-neighborhood covariance; curvature is lam_min / (lam1+lam2+lam3),
    a scale-free measure of how far the neighborhood departs from a plane.
    Normals are made consistent by flood-fill across the neighbor graph.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    pts = cloud.points
    n = len(pts)
    if n < k + 1:
        raise ValueError(f"cloud must have at least k+1 = {k + 1} points")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum(axis=1)

    normals = np.ascontiguousarray(evecs[:, :, 0])
    curv = np.zeros(n)
    ok = total > 0.0
    curv[ok] = evals[ok, 0] / total[ok]

    # Degenerate neighborhoods: coincident points (no extent) or collinear
    # points (no unique normal). Curvature 0, placeholder +z normal.
    collinear = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = (~ok) | collinear
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} degenerate neighborhoods; "
            "normals set to +z, curvature to 0",
            DegenerateNeighborhoodWarning,
            stacklevel=2,
        )
        normals[degenerate] = (0.0, 0.0, 1.0)
        curv[degenerate] = 0.0

    _orient_normals(normals, idx, pts)
    return replace(cloud, normals=normals, curvatures=curv)


def _orient_normals(normals: Points, neighbor_idx: NDArray, pts: Points) -> None:
    """Flip signs in place so normals agree within each neighbor-graph component."""
    n = len(normals)
    visited = np.zeros(n, dtype=bool)
    # Seed components from the top down so the +z hemisphere wins on flat parts.
    order = np.argsort(-pts[:, 2], kind="stable")
    for seed in order:
        if visited[seed]:
            continue
        visited[seed] = True
        normals[seed] = canonical_sign(normals[seed])
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            ni = normals[i]
            for j in neighbor_idx[i, 1:]:
                if visited[j]:
                    continue
                visited[j] = True
                if float(ni @ normals[j]) < 0.0:
                    normals[j] = -normals[j]
                queue.append(j)


def remove_outliers(
    cloud: PointCloud, k: int = 8, stddev_mult: float = 2.0
) -> tuple[PointCloud, int]:
    """Statistical outlier removal by mean k-NN distance thresholding.

    Drops every point whose mean distance to its k nearest neighbors exceeds
    the global mean by more than ``stddev_mult`` standard deviations. Returns
    the filtered cloud and the number of removed points.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(cloud)
    if n <= 1 or not np.isfinite(stddev_mult):
        return cloud, 0
    kk = min(k, n - 1)
    d, _ = cKDTree(cloud.points).query(cloud.points, k=kk + 1)
    mean_d = d[:, 1:].mean(axis=1)
    threshold = mean_d.mean() + stddev_mult * mean_d.std()
    # Guard against float jitter expelling points from perfectly regular data.
    keep = mean_d <= threshold + 1e-12 * max(threshold, 1.0)
    if keep.all():
        return cloud, 0
    return cloud.select(keep), int(n - keep.sum())
