"""Evaluation metrics and per-frame reports."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field

import numpy as np

from .geometry import (M_TO_MM, TriMesh, chamfer_distance, concatenate_meshes, contact_value,
                       marching_cubes, penetration_depth, sample_surface)
from .kinematics import KinematicModel, PartPose, part_transforms
from .voxel import GridSpec, voxel_iou, voxelize

CSV_COLUMNS = ("frame", "Rot", "Transl", "CD", "IoU", "Pene", "Cont", "MPJPE", "PA-MPJPE")
DEFAULT_SAMPLES = 10_000
DEFAULT_RESOLUTION = 128


class DegenerateProcrustesError(ValueError):
    """The joints are (nearly) collinear, so the alignment is not unique."""


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Rotation angle in radians of one or more rotation matrices."""
    R = np.asarray(R, dtype=np.float64)
    v = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    s = 0.5 * np.linalg.norm(v, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


@dataclass
class PoseErrors:
    rotation_deg: np.ndarray
    translation_mm: np.ndarray

    @property
    def mean_rotation_deg(self) -> float:
        return float(np.mean(self.rotation_deg))

    @property
    def mean_translation_mm(self) -> float:
        return float(np.mean(self.translation_mm))


def part_pose_errors(gt, est) -> PoseErrors:
    """Geodesic rotation error (degrees) and translation error (mm) per part."""
    gt, est = list(gt), list(est)
    if len(gt) != len(est):
        raise ValueError(f"part counts differ: {len(gt)} vs {len(est)}")
    if not gt:
        raise ValueError("no parts to compare")
    Rg = np.array([p.matrix for p in gt])
    Re = np.array([p.matrix for p in est])
    ang = np.rad2deg(rotation_angle(Rg @ np.transpose(Re, (0, 2, 1))))
    tr = np.linalg.norm(np.array([p.translation for p in gt]) - np.array([p.translation for p in est]), axis=1)
    return PoseErrors(ang, tr * M_TO_MM)


def procrustes(source: np.ndarray, target: np.ndarray):
    """Similarity (s, R, t) minimizing ``sum |s R source_i + t - target_i|^2``."""
    X = np.asarray(source, dtype=np.float64)
    Y = np.asarray(target, dtype=np.float64)
    mx, my = X.mean(0), Y.mean(0)
    Xc, Yc = X - mx, Y - my
    sv = np.linalg.svd(Xc, compute_uv=False)
    if len(X) < 3 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateProcrustesError("need at least three non-collinear joints")
    U, S, Vt = np.linalg.svd(Yc.T @ Xc)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    s = float(np.sum(S * np.diag(D)) / np.sum(Xc * Xc))
    t = my - s * R @ mx
    return s, R, t


def pa_mpjpe(gt_joints, est_joints) -> tuple[float, float]:
    """(MPJPE, PA-MPJPE) in mm; inputs are (J, 3) arrays in metres."""
    G = np.asarray(gt_joints, dtype=np.float64).reshape(-1, 3)
    E = np.asarray(est_joints, dtype=np.float64).reshape(-1, 3)
    if G.shape != E.shape:
        raise ValueError(f"joint counts differ: {len(G)} vs {len(E)}")
    mpjpe = float(np.mean(np.linalg.norm(G - E, axis=1))) * M_TO_MM
    s, R, t = procrustes(E, G)
    aligned = s * E @ R.T + t
    pa = float(np.mean(np.linalg.norm(G - aligned, axis=1))) * M_TO_MM
    # the identity is a candidate alignment, so rounding is the only way past it
    return mpjpe, min(pa, mpjpe)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class Scene:
    """A posed articulated object, optionally with the posed body."""

    model: KinematicModel
    part_meshes: list
    root: PartPose
    state: np.ndarray
    body_mesh: TriMesh | None = None
    body_joints: np.ndarray | None = None

    def part_poses(self) -> list:
        T = part_transforms(self.model, self.root, self.state)
        return [PartPose.from_matrix(t) for t in T]

    def object_mesh(self) -> TriMesh:
        T = part_transforms(self.model, self.root, self.state)
        return concatenate_meshes([m.transformed(T[i]) for i, m in enumerate(self.part_meshes)])


@dataclass
class EvalReport:
    rotation_deg: list
    translation_mm: list
    mean_rotation_deg: float
    mean_translation_mm: float
    chamfer_mm: float
    iou_percent: float
    penetration_mm: float
    contact_mm: float
    mpjpe_mm: float | None = None
    pa_mpjpe_mm: float | None = None
    metadata: dict = field(default_factory=dict)

    def row(self, frame="0") -> dict:
        fmt = lambda v: "" if v is None else repr(float(v))
        return {"frame": frame, "Rot": fmt(self.mean_rotation_deg), "Transl": fmt(self.mean_translation_mm),
                "CD": fmt(self.chamfer_mm), "IoU": fmt(self.iou_percent), "Pene": fmt(self.penetration_mm),
                "Cont": fmt(self.contact_mm), "MPJPE": fmt(self.mpjpe_mm), "PA-MPJPE": fmt(self.pa_mpjpe_mm)}

    def to_dict(self) -> dict:
        return {
            "rotation_deg": [float(v) for v in self.rotation_deg],
            "translation_mm": [float(v) for v in self.translation_mm],
            "mean_rotation_deg": self.mean_rotation_deg,
            "mean_translation_mm": self.mean_translation_mm,
            "chamfer_mm": self.chamfer_mm,
            "iou_percent": self.iou_percent,
            "penetration_mm": self.penetration_mm,
            "contact_mm": self.contact_mm,
            "mpjpe_mm": self.mpjpe_mm,
            "pa_mpjpe_mm": self.pa_mpjpe_mm,
            "metadata": self.metadata,
        }


def eval_report(gt: Scene, est: Scene, resolution: int = DEFAULT_RESOLUTION, samples: int = DEFAULT_SAMPLES,
                seed: int = 0, cd_pathway: str = "mesh", grid_center=None, symmetric_parts=()) -> EvalReport:
    """All evaluation quantities for one frame.

    Chamfer distance uses ``samples`` area-weighted points per surface. IoU
    compares solid voxelizations on a 2 m cube centred on the ground-truth
    pelvis (first body joint) or ``grid_center``. Penetration and contact
    are measured between the estimated object and the estimated body
    (falling back to the ground-truth body). With ``cd_pathway =
    "marching_cubes"`` the estimated surface is the isosurface of its
    voxelization instead of the mesh.
    """
    if gt.model.n_parts != est.model.n_parts:
        raise ValueError("scenes use different kinematic models")
    if cd_pathway not in ("mesh", "marching_cubes"):
        raise ValueError(f"unknown chamfer pathway {cd_pathway!r}")
    errs = part_pose_errors(gt.part_poses(), est.part_poses())
    gt_mesh, est_mesh = gt.object_mesh(), est.object_mesh()

    if grid_center is None:
        if gt.body_joints is not None:
            grid_center = np.asarray(gt.body_joints)[0]
        else:
            grid_center = gt_mesh.vertices.mean(0)
    spec = GridSpec.cube(resolution, grid_center)
    gt_vox = voxelize(gt_mesh, spec, "solid")[0]
    est_vox = voxelize(est_mesh, spec, "solid")[0]
    iou = voxel_iou(gt_vox, est_vox) * 100.0

    est_surface_mesh = est_mesh if cd_pathway == "mesh" else marching_cubes(est_vox)
    gt_pts = sample_surface(gt_mesh, samples, seed)
    est_pts = sample_surface(est_surface_mesh, samples, seed)
    cd = chamfer_distance(gt_pts, est_pts)

    body = est.body_mesh if est.body_mesh is not None else gt.body_mesh
    obj_pts = sample_surface(est_mesh, samples, seed + 2)
    if body is not None:
        pene = penetration_depth(body, obj_pts).depth_mm
        cont = contact_value(sample_surface(body, samples, seed + 3), obj_pts)
    else:
        pene, cont = 0.0, float("nan")

    mp = pa = None
    if gt.body_joints is not None and est.body_joints is not None:
        mp, pa = pa_mpjpe(gt.body_joints, est.body_joints)

    meta = {"samples": samples, "seed": seed, "resolution": resolution, "voxelization": "solid",
            "cd_pathway": cd_pathway, "grid_center": np.asarray(grid_center, dtype=float).tolist(),
            "symmetric_parts": list(symmetric_parts)}
    return EvalReport(errs.rotation_deg.tolist(), errs.translation_mm.tolist(), errs.mean_rotation_deg,
                      errs.mean_translation_mm, cd, iou, pene, cont, mp, pa, meta)


def reports_to_csv(reports, frames=None) -> str:
    """CSV text with one row per frame in the table column order."""
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for i, r in enumerate(reports):
        w.writerow(r.row(str(frames[i]) if frames is not None else str(i)))
    return buf.getvalue()
