"""Mesh and point-set primitives and the interaction measurements.

All inputs are in metres. Chamfer, penetration and contact values are
reported in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels

M_TO_MM = 1000.0
CONTACT_CLIP_MM = 200.0
INSIDE_THRESHOLD = 0.5


class EmptyInputError(ValueError):
    pass


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_areas(self) -> np.ndarray:
        V, F = self.vertices, self.triangles
        return 0.5 * np.linalg.norm(np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        V, F = self.vertices, self.triangles
        if not len(F):
            return 0.0
        return float(np.einsum("ij,ij->i", V[F[:, 0]], np.cross(V[F[:, 1]], V[F[:, 2]])).sum() / 6.0)

    def transformed(self, M) -> "TriMesh":
        M = np.asarray(M, dtype=np.float64)
        return TriMesh(self.vertices @ M[:3, :3].T + M[:3, 3], self.triangles)

    def cleaned(self, eps: float = 1e-15) -> "TriMesh":
        """Drop zero-area and index-repeating triangles."""
        F = self.triangles
        keep = (F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])
        keep &= self.face_areas() > eps
        return TriMesh(self.vertices, F[keep])

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1])


def concatenate_meshes(meshes) -> TriMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(P)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", P)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))

    def __len__(self):
        return len(self.points)

    def transformed(self, M) -> "PointSet":
        M = np.asarray(M, dtype=np.float64)
        n = None if self.normals is None else self.normals @ M[:3, :3].T
        return PointSet(self.points @ M[:3, :3].T + M[:3, 3], n)


def _points(x) -> np.ndarray:
    if isinstance(x, PointSet):
        return x.points
    if isinstance(x, TriMesh):
        return x.vertices
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Distances


def chamfer_distance(a, b) -> float:
    """Symmetric mean chamfer distance in mm.

    ``0.5 * (mean_a min_b |a - b| + mean_b min_a |b - a|)``; nearest
    neighbours come from a KD-tree, which is exact.
    """
    A, B = _points(a), _points(b)
    if not len(A) or not len(B):
        raise EmptyInputError("chamfer distance needs two non-empty point sets")
    d_ab = cKDTree(B).query(A, k=1)[0]
    d_ba = cKDTree(A).query(B, k=1)[0]
    return float(0.5 * (d_ab.mean() + d_ba.mean()) * M_TO_MM)


def contact_value(body_surface, object_surface, clip_mm: float = CONTACT_CLIP_MM) -> float:
    """Shortest human-object distance in mm, clipped to ``[0, clip_mm]``."""
    H, O = _points(body_surface), _points(object_surface)
    if not len(H) or not len(O):
        raise EmptyInputError("contact value needs two non-empty point sets")
    d = cKDTree(H).query(O, k=1)[0].min() * M_TO_MM
    return float(min(max(d, 0.0), clip_mm))


def boundary_edges(mesh: TriMesh) -> int:
    """Number of directed edges without an oppositely oriented twin."""
    F = mesh.triangles
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    fwd = {tuple(x) for x in e.tolist()}
    return sum(1 for (i, j) in fwd if (j, i) not in fwd) + (len(e) - len(fwd))


def is_watertight(mesh: TriMesh) -> bool:
    """Every directed edge has exactly one reversed twin (closed, consistently oriented)."""
    return len(mesh.triangles) > 0 and boundary_edges(mesh) == 0


def winding_numbers(mesh: TriMesh, points) -> np.ndarray:
    return kernels.winding_numbers(_points(points), mesh.vertices, mesh.triangles)


def closest_surface_points(mesh: TriMesh, points):
    """``(distance, closest point, face index)`` for each query point."""
    return kernels.closest_points(_points(points), mesh.vertices, mesh.triangles)


@dataclass(frozen=True)
class Penetration:
    depth_mm: float
    depths_mm: np.ndarray
    directions: np.ndarray
    inside: np.ndarray


def penetration_depth(body: TriMesh, object_surface, check_watertight: bool = True) -> Penetration:
    """Depth of object surface points inside a closed body mesh.

    A point is inside when its generalized winding number is at least 0.5;
    its depth is the distance to the closest body surface point and its
    direction the unit vector from the point toward that surface point.
    Points outside have depth 0 and a zero direction. ``depth_mm`` is the
    maximum over points (0 when nothing penetrates).
    """
    if check_watertight and not is_watertight(body):
        raise TopologyError("body mesh is not watertight")
    P = _points(object_surface)
    depths = np.zeros(len(P))
    dirs = np.zeros((len(P), 3))
    if not len(P):
        return Penetration(0.0, depths, dirs, np.zeros(0, dtype=bool))
    # only points inside the body's bounding box can be inside it
    lo, hi = body.vertices.min(0), body.vertices.max(0)
    cand = np.nonzero(np.all((P >= lo) & (P <= hi), axis=1))[0]
    inside = np.zeros(len(P), dtype=bool)
    if len(cand):
        w = winding_numbers(body, P[cand])
        idx = cand[w >= INSIDE_THRESHOLD]
        inside[idx] = True
        if len(idx):
            dist, near, _ = closest_surface_points(body, P[idx])
            depths[idx] = dist * M_TO_MM
            d = near - P[idx]
            n = np.linalg.norm(d, axis=1, keepdims=True)
            dirs[idx] = np.divide(d, n, out=np.zeros_like(d), where=n > 0)
    return Penetration(float(depths.max()), depths, dirs, inside)


# ---------------------------------------------------------------------------
# Sampling and isosurfaces


def sample_surface(mesh: TriMesh, count: int, seed=0) -> PointSet:
    """Area-weighted uniform surface samples with their face normals."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if mesh.is_empty:
        raise EmptyInputError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise EmptyInputError("mesh has zero surface area")
    face = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    V, F = mesh.vertices, mesh.triangles[face]
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return PointSet(pts, n)


def marching_cubes(grid, iso: float = 0.5) -> TriMesh:
    """Triangulate the ``iso`` level set of an occupancy grid in world coordinates.

    The grid is zero-padded so surfaces touching the bounds still close, and
    faces are oriented outward (toward lower occupancy).
    """
    from skimage import measure

    occ = np.asarray(grid.occupancy, dtype=np.float64)
    if not 0.0 < iso < 1.0:
        raise ValueError("iso must lie in (0, 1)")
    if min(occ.shape) < 2:
        raise ValueError("grid needs at least 2 cells per axis")
    if occ.max() <= iso or occ.min() >= iso:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    padded = np.pad(occ, 1, mode="constant", constant_values=0.0)
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso, allow_degenerate=False)
    cell = grid.spec.cell_size
    verts = grid.spec.origin + (verts - 1.0 + 0.5) * cell
    mesh = TriMesh(verts, faces).cleaned()
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


# ---------------------------------------------------------------------------
# Simple closed shapes used by fixtures and tests


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    V = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        F2 = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            F2 += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = F2
    return TriMesh(np.array(V) * radius + np.asarray(center, dtype=np.float64), np.array(F))


def circumscribed_sphere(subdivisions: int = 2, radius: float = 1.0) -> tuple[TriMesh, np.ndarray]:
    """Closed convex mesh whose faces are tangent to a sphere of ``radius``.

    Returns the mesh and the unit tangent directions; along each tangent
    direction the distance from an interior point ``t * radius * n`` to the
    surface is exactly ``radius * (1 - t)``.
    """
    from scipy.spatial import ConvexHull, HalfspaceIntersection

    normals = icosphere(subdivisions).vertices
    halfspaces = np.hstack([normals, -radius * np.ones((len(normals), 1))])
    hs = HalfspaceIntersection(halfspaces, np.zeros(3))
    verts = hs.intersections
    hull = ConvexHull(verts)
    F = hull.simplices.copy()
    # orient outward
    V = verts
    n = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    flip = np.einsum("ij,ij->i", n, V[F[:, 0]]) < 0
    F[flip] = F[flip][:, ::-1]
    return TriMesh(verts, F).cleaned(), normals


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    h = np.asarray(size, dtype=np.float64) / 2.0
    c = np.asarray(center, dtype=np.float64)
    V = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64) * h + c
    F = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return TriMesh(V, F)


def cylinder_mesh(p0, p1, radius: float, segments: int = 8, rings: int = 2) -> TriMesh:
    """Closed capped cylinder from ``p0`` to ``p1``."""
    p0, p1 = np.asarray(p0, dtype=np.float64), np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    w = axis / length
    tmp = np.array([1.0, 0, 0]) if abs(w[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(w, tmp)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    ang = 2 * np.pi * np.arange(segments) / segments
    circle = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v
    verts = []
    for r in range(rings + 1):
        verts.append(p0 + axis * r / rings + radius * circle)
    verts = list(np.concatenate(verts))
    bottom, top = len(verts), len(verts) + 1
    verts += [p0, p1]
    F = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c, d = a + segments, b + segments
            F += [[a, b, d], [a, d, c]]
    for s in range(segments):
        F.append([bottom, (s + 1) % segments, s])
        t0 = rings * segments
        F.append([top, t0 + s, t0 + (s + 1) % segments])
    return TriMesh(np.array(verts), np.array(F))
