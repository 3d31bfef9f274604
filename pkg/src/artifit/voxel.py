"""Occupancy grids: voxelization, multi-resolution human grids, differentiable
resampling of articulated part grids, and grid comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import PointSet, TriMesh, sample_surface, winding_numbers, INSIDE_THRESHOLD
from .kinematics import (KinematicModel, PartPose, apply_limits, part_transform_derivatives, part_transforms,
                         rest_transforms)

DEFAULT_EXTENT = 2.0
DEFAULT_BASE_RESOLUTION = 16
BINARY_THRESHOLD = 0.5


class ShapeError(ValueError):
    """Raised when grids with different specs are combined."""


@dataclass(frozen=True)
class GridSpec:
    resolution: tuple
    origin: np.ndarray = field(default_factory=lambda: np.full(3, -DEFAULT_EXTENT / 2))
    extent: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_EXTENT))

    def __post_init__(self):
        res = np.broadcast_to(np.asarray(self.resolution, dtype=np.int64), (3,))
        if np.any(res < 2):
            raise ValueError(f"resolution must be >= 2 per axis, got {res.tolist()}")
        ext = np.broadcast_to(np.asarray(self.extent, dtype=np.float64), (3,)).copy()
        if np.any(ext <= 0):
            raise ValueError("extent must be positive")
        object.__setattr__(self, "resolution", tuple(int(r) for r in res))
        object.__setattr__(self, "origin", np.broadcast_to(np.asarray(self.origin, dtype=np.float64), (3,)).copy())
        object.__setattr__(self, "extent", ext)

    @classmethod
    def cube(cls, resolution: int, center=(0.0, 0.0, 0.0), extent: float = DEFAULT_EXTENT) -> "GridSpec":
        """Cubic grid of side ``extent`` centred on ``center``."""
        c = np.asarray(center, dtype=np.float64)
        return cls((resolution,) * 3, c - extent / 2.0, np.full(3, float(extent)))

    @property
    def cell_size(self) -> np.ndarray:
        return self.extent / np.array(self.resolution)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    def scaled(self, factor: int) -> "GridSpec":
        return GridSpec(tuple(r * factor for r in self.resolution), self.origin, self.extent)

    def centers(self) -> np.ndarray:
        """Cell centres, shape resolution + (3,)."""
        axes = [self.origin[d] + (np.arange(self.resolution[d]) + 0.5) * self.cell_size[d] for d in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell indices of ``points`` and a mask of in-bounds points."""
        P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((P - self.origin) / self.cell_size).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.resolution)), axis=1)
        return idx, ok

    def same_as(self, other: "GridSpec") -> bool:
        return (self.resolution == other.resolution and np.array_equal(self.origin, other.origin)
                and np.array_equal(self.extent, other.extent))


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy values in [0, 1]; array index order (x, y, z), z fastest."""

    spec: GridSpec
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.float64)
        if occ.shape != self.spec.resolution:
            occ = occ.reshape(self.spec.resolution)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "VoxelGrid":
        return cls(spec, np.zeros(spec.resolution))

    def binary(self, threshold: float = BINARY_THRESHOLD) -> np.ndarray:
        return self.occupancy >= threshold


@dataclass(frozen=True)
class MultiResVoxel:
    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        for g in levels[1:]:
            if not (np.array_equal(g.spec.origin, levels[0].spec.origin)
                    and np.array_equal(g.spec.extent, levels[0].spec.extent)):
                raise ShapeError("multi-resolution levels must share bounds")
        object.__setattr__(self, "levels", levels)

    def at(self, resolution) -> VoxelGrid:
        """The level whose resolution matches ``resolution``."""
        res = tuple(np.broadcast_to(np.asarray(resolution), (3,)).tolist())
        for g in self.levels:
            if g.spec.resolution == res:
                return g
        raise ShapeError(f"no level at resolution {res}")

    @property
    def finest(self) -> VoxelGrid:
        return self.levels[-1]


def _check_same(a: VoxelGrid, b: VoxelGrid):
    if not a.spec.same_as(b.spec):
        raise ShapeError("grids have different specs")


# ---------------------------------------------------------------------------
# Voxelization


def _surface_samples(mesh: TriMesh, cell: float, seed: int = 0) -> np.ndarray:
    """Dense deterministic samples so that every touched cell receives one."""
    if mesh.is_empty:
        return mesh.vertices
    count = int(np.ceil(mesh.area() / (cell * cell) * 16)) + 1
    pts = sample_surface(mesh, min(count, 5_000_000), seed=seed).points
    return np.concatenate([mesh.vertices, pts])


def voxelize(surface, spec: GridSpec, mode: str = "surface") -> tuple[VoxelGrid, int]:
    """Occupancy grid of a point set or triangle mesh.

    ``surface`` mode marks every cell holding at least one sample; meshes are
    densely sampled first. ``solid`` mode marks the cells whose centre lies
    inside a closed mesh (winding number >= 0.5).

    Returns:
        ``(grid, dropped)`` where ``dropped`` counts samples outside the grid.
    """
    occ = np.zeros(spec.resolution)
    if mode == "solid":
        if not isinstance(surface, TriMesh):
            raise TypeError("solid voxelization needs a closed TriMesh")
        if surface.is_empty:
            return VoxelGrid(spec, occ), 0
        lo, hi = surface.vertices.min(0), surface.vertices.max(0)
        dropped = int(np.sum(np.any((surface.vertices < spec.origin) | (surface.vertices > spec.origin + spec.extent), axis=1)))
        C = spec.centers().reshape(-1, 3)
        cand = np.nonzero(np.all((C >= lo) & (C <= hi), axis=1))[0]
        if len(cand):
            w = winding_numbers(surface, C[cand])
            occ.reshape(-1)[cand[w >= INSIDE_THRESHOLD]] = 1.0
        return VoxelGrid(spec, occ), dropped
    if mode != "surface":
        raise ValueError(f"unknown voxelization mode {mode!r}")
    if isinstance(surface, TriMesh):
        pts = _surface_samples(surface, float(spec.cell_size.min()))
    elif isinstance(surface, PointSet):
        pts = surface.points
    else:
        pts = np.asarray(surface, dtype=np.float64).reshape(-1, 3)
    idx, ok = spec.cell_index(pts)
    idx = idx[ok]
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return VoxelGrid(spec, occ), int(np.sum(~ok))


def multires_voxelize(body, base_resolution: int = DEFAULT_BASE_RESOLUTION, center=None,
                      extent: float = DEFAULT_EXTENT, levels: int = 4) -> MultiResVoxel:
    """Surface-mode grids of a posed body at resolutions r, 2r, 4r, 8r.

    All levels are built from one sample set, so every coarse cell equals the
    max of its eight children. The cube is centred on ``center`` (default:
    the body's first joint, the pelvis).
    """
    verts = np.asarray(body.vertices, dtype=np.float64).reshape(-1, 3)
    faces = getattr(body, "faces", None)
    if center is None:
        joints = getattr(body, "joints", None)
        center = joints[0] if joints is not None and len(joints) else np.zeros(3)
    finest = GridSpec.cube(base_resolution * 2 ** (levels - 1), center, extent)
    if faces is not None and len(faces) and len(verts):
        pts = _surface_samples(TriMesh(verts, faces), float(finest.cell_size.min()))
    else:
        pts = verts
    grids = []
    for k in range(levels):
        spec = GridSpec.cube(base_resolution * 2 ** k, center, extent)
        grids.append(voxelize(PointSet(pts), spec, "surface")[0])
    return MultiResVoxel(tuple(grids))


def max_pool(grid: VoxelGrid, factor: int = 2) -> VoxelGrid:
    r = np.array(grid.spec.resolution)
    if np.any(r % factor):
        raise ShapeError("resolution not divisible by pooling factor")
    o = grid.occupancy.reshape(r[0] // factor, factor, r[1] // factor, factor, r[2] // factor, factor)
    spec = GridSpec(tuple(r // factor), grid.spec.origin, grid.spec.extent)
    return VoxelGrid(spec, o.max(axis=(1, 3, 5)))


# ---------------------------------------------------------------------------
# Differentiable resampling


@dataclass
class Resampled:
    """Resampled occupancy and its gradient with respect to pose parameters.

    ``grad`` has shape (9 + n_dof,) + resolution, ordered as the root 6D
    seeds, root translation, then joint scalars.
    """

    grid: VoxelGrid
    grad: np.ndarray | None
    part_index: np.ndarray


def pose_vector(root: PartPose, state) -> np.ndarray:
    return np.concatenate([root.rotation, root.translation, np.asarray(state, dtype=np.float64).reshape(-1)])


def split_pose_vector(p) -> tuple[PartPose, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    return PartPose(p[:6], p[6:9]), p[9:].copy()


def _support_box(part: VoxelGrid, rel: np.ndarray, spec: GridSpec):
    """Index box of output cells that can sample non-zero occupancy."""
    nz = np.argwhere(part.occupancy > 0)
    if not len(nz):
        return None
    c = spec.cell_size
    lo_w = spec.origin + (nz.min(0) - 0.5) * c
    hi_w = spec.origin + (nz.max(0) + 1.5) * c
    corners = np.array([[x, y, z] for x in (lo_w[0], hi_w[0]) for y in (lo_w[1], hi_w[1]) for z in (lo_w[2], hi_w[2])])
    W = corners @ rel[:3, :3].T + rel[:3, 3]
    lo = np.floor((W.min(0) - spec.origin) / c - 0.5).astype(np.int64) - 1
    hi = np.ceil((W.max(0) - spec.origin) / c - 0.5).astype(np.int64) + 2
    res = np.array(spec.resolution)
    lo = np.clip(lo, 0, res)
    hi = np.clip(hi, 0, res)
    if np.any(hi <= lo):
        return None
    return lo, hi


def resample_transformed(model: KinematicModel, part_grids, root: PartPose, state,
                         want_grad: bool = True, limit_mode: str = "clamp",
                         rest: np.ndarray | None = None) -> Resampled:
    """Occupancy of the articulated object posed by ``root`` and ``state``.

    Each part grid holds that part's occupancy in the object's canonical
    (rest) pose. Output cell centres are pulled back through the part's
    rest-to-posed transform and trilinearly interpolated (zero outside the
    grid). Parts combine by elementwise max; the gradient of each cell comes
    from the part attaining the max, ties going to the lowest part index.
    """
    part_grids = list(part_grids)
    if len(part_grids) != model.n_parts:
        raise ShapeError(f"{len(part_grids)} part grids for {model.n_parts} parts")
    spec = part_grids[0].spec
    for g in part_grids[1:]:
        if not g.spec.same_as(spec):
            raise ShapeError("part grids must share one spec")
    state = apply_limits(model, state, limit_mode)
    T, dT = part_transform_derivatives(model, root, state)
    if rest is None:
        rest = rest_transforms(model)
    n_par = dT.shape[1]

    out = np.zeros(spec.resolution)
    best = np.full(spec.resolution, -1, dtype=np.int64)
    grad = np.zeros((n_par,) + spec.resolution) if want_grad else None
    for i, pg in enumerate(part_grids):
        rest_inv = np.linalg.inv(rest[i])
        rel = T[i] @ rest_inv
        box = _support_box(pg, rel, spec)
        if box is None:
            continue
        lo, hi = box
        R, t = rel[:3, :3], rel[:3, 3]
        A = R.T
        b = -R.T @ t
        # d(rel)/dp = dT_i @ rest_inv; dA = dR^T, db = -(dR^T t + R^T dt)
        drel = dT[i] @ rest_inv
        dR, dt = drel[:, :3, :3], drel[:, :3, 3]
        dA = np.transpose(dR, (0, 2, 1))
        db = -(np.einsum("pji,j->pi", dR, t) + np.einsum("ji,pj->pi", R, dt))
        vals, g = kernels.sample_affine(pg.occupancy, spec.origin, spec.cell_size, A, b, dA, db,
                                        lo, hi, want_grad)
        sl = tuple(slice(int(l), int(h)) for l, h in zip(lo, hi))
        cur = out[sl]
        take = vals > cur
        # first part to touch a cell claims it, so a tie keeps the lower index
        take |= (best[sl] < 0)
        cur[take] = vals[take]
        best[sl][take] = i
        if want_grad:
            gs = grad[(slice(None),) + sl]
            gs[:, take] = g[:, take]
    np.clip(out, 0.0, 1.0, out=out)
    return Resampled(VoxelGrid(spec, out), grad, best)


def _stencil_cells(model: KinematicModel, part_grids, root: PartPose, state, rest) -> np.ndarray:
    """Lower trilinear corner index of every output cell for every part."""
    spec = part_grids[0].spec
    T = part_transforms(model, root, state)
    X = spec.centers().reshape(-1, 3)
    out = np.empty((model.n_parts, len(X), 3), dtype=np.int64)
    for i in range(model.n_parts):
        rel = T[i] @ np.linalg.inv(rest[i])
        R, t = rel[:3, :3], rel[:3, 3]
        Y = (X - t) @ R
        out[i] = np.floor((Y - spec.origin) / spec.cell_size - 0.5)
    return out


def resample_gradient_error(model: KinematicModel, part_grids, root: PartPose, state,
                            step: float = 1e-4, zero_tol: float = 1e-8) -> float:
    """Worst per-parameter discrepancy of the analytic resampling gradient.

    Each parameter's analytic gradient field is compared to the central
    difference over the cells where the perturbation stays on one smooth
    piece: the same trilinear stencil for every part and the same winning
    part. The error is the max-norm difference relative to the larger of the
    two fields' max norms, or absolute when both are below ``zero_tol``.
    """
    part_grids = list(part_grids)
    state = apply_limits(model, state, "clamp")
    rest = rest_transforms(model)
    base = resample_transformed(model, part_grids, root, state, want_grad=True, rest=rest)
    p0 = pose_vector(root, state)
    cells0 = _stencil_cells(model, part_grids, root, state, rest)
    G = base.grad.reshape(len(p0), -1)
    worst = 0.0
    for k in range(len(p0)):
        vals, keep = [], np.ones(G.shape[1], dtype=bool)
        for sgn in (1.0, -1.0):
            p = p0.copy()
            p[k] += sgn * step
            r, s = split_pose_vector(p)
            res = resample_transformed(model, part_grids, r, s, want_grad=False, rest=rest)
            vals.append(res.grid.occupancy.ravel())
            keep &= (res.part_index.ravel() == base.part_index.ravel())
            keep &= np.all(_stencil_cells(model, part_grids, r, s, rest) == cells0, axis=(0, 2))
        fd = (vals[0] - vals[1]) / (2 * step)
        a, n = G[k, keep], fd[keep]
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
        diff = np.abs(a - n).max(initial=0.0)
        worst = max(worst, diff if scale < zero_tol else diff / scale)
    return worst


# ---------------------------------------------------------------------------
# Comparisons


def voxel_iou(a: VoxelGrid, b: VoxelGrid, threshold: float = BINARY_THRESHOLD) -> float:
    """Intersection over union of binarized grids; 1.0 when both are empty."""
    _check_same(a, b)
    A, B = a.binary(threshold), b.binary(threshold)
    union = np.count_nonzero(A | B)
    if union == 0:
        return 1.0
    return np.count_nonzero(A & B) / union


def voxel_l1(a: VoxelGrid, b: VoxelGrid) -> float:
    """Mean absolute occupancy difference."""
    _check_same(a, b)
    return float(np.mean(np.abs(a.occupancy - b.occupancy)))


def voxel_l2(a: VoxelGrid, b: VoxelGrid) -> float:
    """Euclidean norm of the occupancy difference."""
    _check_same(a, b)
    return float(np.linalg.norm((a.occupancy - b.occupancy).ravel()))
