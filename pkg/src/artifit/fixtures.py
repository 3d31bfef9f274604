"""Synthetic scenes used by tests, benchmarks and the bundled demo data."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .body import BodyModel, BodyParams, PosedBody, make_test_body, pose_body
from .geometry import PointSet, TriMesh, box_mesh, concatenate_meshes, sample_surface
from .kinematics import (REVOLUTE, Joint, KinematicModel, Part, PartPose, axis_angle_to_matrix,
                         homogeneous, matrix_to_rot6d, rest_transforms)
from .voxel import GridSpec, MultiResVoxel, VoxelGrid, multires_voxelize, resample_transformed, voxelize

SEAT_SIZE = (0.45, 0.12, 0.45)
PEDESTAL_SIZE = (0.1, 0.3, 0.1)
BACK_SIZE = (0.45, 0.45, 0.08)
HINGE = (0.0, 0.06, -0.25)


def chair_local_meshes() -> list[TriMesh]:
    """Part meshes in their own part frames (seat + pedestal, backrest)."""
    seat = concatenate_meshes([
        box_mesh(SEAT_SIZE),
        box_mesh(PEDESTAL_SIZE, (0.0, -(SEAT_SIZE[1] + PEDESTAL_SIZE[1]) / 2, 0.0)),
    ])
    back = box_mesh(BACK_SIZE, (0.0, BACK_SIZE[1] / 2, -BACK_SIZE[2] / 2))
    return [seat, back]


def two_part_chair(limits=(-0.8, 0.8)) -> KinematicModel:
    """Seat (root) and a backrest hinged about +x at the seat's rear edge."""
    return KinematicModel(
        parts=(Part("seat", (("seat.obj", np.eye(4)),)), Part("back", (("back.obj", np.eye(4)),))),
        joints=(Joint(REVOLUTE, 0, 1, axis=[1.0, 0.0, 0.0], origin=homogeneous(np.eye(3), HINGE),
                      limits=limits, name="recline"),),
    )


def canonical_part_meshes(model: KinematicModel, local_meshes) -> list[TriMesh]:
    rest = rest_transforms(model)
    return [m.transformed(rest[i]) for i, m in enumerate(local_meshes)]


def part_grids(model: KinematicModel, local_meshes, spec: GridSpec) -> list[VoxelGrid]:
    """Solid occupancy of every part at the object's canonical pose."""
    return [voxelize(m, spec, "solid")[0] for m in canonical_part_meshes(model, local_meshes)]


def posed_object_mesh(model: KinematicModel, local_meshes, root: PartPose, state) -> TriMesh:
    from .kinematics import part_transforms
    T = part_transforms(model, root, state)
    return concatenate_meshes([m.transformed(T[i]) for i, m in enumerate(local_meshes)])


def sitting_params(model: BodyModel) -> BodyParams:
    """Seated pose: hips flexed 90 degrees, knees bent back 90 degrees."""
    p = model.zero_params()
    r6 = p.rotations6d().copy()
    names = list(model.joint_names)
    hip = matrix_to_rot6d(axis_angle_to_matrix([1.0, 0, 0], -np.pi / 2))
    knee = matrix_to_rot6d(axis_angle_to_matrix([1.0, 0, 0], np.pi / 2))
    for side in ("left", "right"):
        r6[names.index(f"{side}_hip")] = hip
        r6[names.index(f"{side}_knee")] = knee
    return p.with_rotations6d(r6)


@dataclass
class FitScene:
    """A seated body and the two-part chair it sits on."""

    body_model: BodyModel
    body_params: BodyParams
    body: PosedBody
    human: MultiResVoxel
    model: KinematicModel
    local_meshes: list
    spec: GridSpec
    part_grids: list
    gt_root: PartPose
    gt_state: np.ndarray

    def render(self, root: PartPose, state) -> VoxelGrid:
        return resample_transformed(self.model, self.part_grids, root, state, want_grad=False).grid

    def target(self) -> VoxelGrid:
        return self.render(self.gt_root, self.gt_state)

    def object_surface(self, root: PartPose, state, count: int = 4000, seed: int = 0) -> PointSet:
        return sample_surface(posed_object_mesh(self.model, self.local_meshes, root, state), count, seed)

    def body_surface(self, count: int = 8000, seed: int = 0) -> PointSet:
        return sample_surface(self.body.mesh(), count, seed)


def fit_scene(resolution: int = 64, recline: float = 0.15, human_base: int | None = None) -> FitScene:
    """The 2-part revolute fixture with the seat touching the seated body."""
    body_model = make_test_body()
    params = sitting_params(body_model)
    body = pose_body(body_model, params)
    base = human_base or max(2, resolution // 8)
    human = multires_voxelize(body, base, center=np.zeros(3))
    spec = GridSpec.cube(resolution)
    model = two_part_chair()
    local = chair_local_meshes()
    grids = part_grids(model, local, spec)
    # seat top 10 mm under the thighs (thigh radius 0.07 about y = -0.08)
    seat_top = -0.08 - 0.07 - 0.01
    gt_root = PartPose(np.array([1.0, 0, 0, 0, 1, 0]), [0.0, seat_top - SEAT_SIZE[1] / 2, 0.05])
    return FitScene(body_model, params, body, human, model, local, spec, grids, gt_root,
                    np.array([recline]))


# ---------------------------------------------------------------------------
# Penetration scenes


@dataclass
class PenetrationScene:
    name: str
    body_model: BodyModel
    params: BodyParams
    obstacle: TriMesh
    surface: PointSet


def _box_from_bounds(lo, hi) -> TriMesh:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    return box_mesh(hi - lo, (hi + lo) / 2)


def penetration_scenes(samples: int = 6000, seed: int = 0) -> list[PenetrationScene]:
    """Five boxes pushed into different limbs of the T-posed test body."""
    bm = make_test_body()
    params = bm.zero_params()
    specs = [
        ("left_forearm_below", ([0.52, 0.20, -0.15], [0.64, 0.44, 0.15])),
        ("right_forearm_above", ([-0.64, 0.465, -0.15], [-0.52, 0.7, 0.15])),
        ("left_upperarm_front", ([0.25, 0.3, 0.02], [0.37, 0.6, 0.3])),
        ("right_shin_front", ([-0.25, -0.8, 0.015], [0.0, -0.6, 0.3])),
        ("head_back", ([-0.2, 0.62, -0.4], [0.2, 0.78, -0.06])),
    ]
    out = []
    for k, (name, (lo, hi)) in enumerate(specs):
        box = _box_from_bounds(lo, hi)
        out.append(PenetrationScene(name, bm, params, box, sample_surface(box, samples, seed + k)))
    return out


# ---------------------------------------------------------------------------
# Alignment fixtures


def three_planes(n_per_plane: int = 2000, size: float = 1.0, seed=0) -> np.ndarray:
    """Points on three mutually orthogonal square patches meeting at a corner."""
    rng = np.random.default_rng(seed)
    out = []
    for axis in range(3):
        uv = rng.random((n_per_plane, 2)) * size
        p = np.zeros((n_per_plane, 3))
        others = [a for a in range(3) if a != axis]
        p[:, others[0]] = uv[:, 0]
        p[:, others[1]] = uv[:, 1]
        out.append(p)
    return np.concatenate(out) - size / 4


def random_rigid(rng, max_angle_deg: float, max_shift: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(max_angle_deg) * rng.random()
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return homogeneous(axis_angle_to_matrix(axis, angle), d * max_shift * rng.random())


def noisy_sinusoid(n: int, rng, snr_db: float = 10.0, period: float = 60.0) -> np.ndarray:
    """Sum of sinusoids plus white noise at the requested signal-to-noise ratio."""
    t = np.arange(n, dtype=np.float64)
    phases = rng.random(3) * 2 * np.pi
    sig = (np.sin(2 * np.pi * t / period + phases[0])
           + 0.5 * np.sin(2 * np.pi * t / (period * 0.37) + phases[1])
           + 0.3 * np.sin(2 * np.pi * t / (period * 2.3) + phases[2]))
    p_sig = np.mean(sig ** 2)
    p_noise = p_sig / 10 ** (snr_db / 10)
    return sig + rng.normal(scale=np.sqrt(p_noise), size=n)


# ---------------------------------------------------------------------------
# Bundled demo data

BUNDLE_INIT_ROTATION_DEG = 8.0
BUNDLE_INIT_SHIFT = (0.03, 0.04, -0.02)


def write_fixture_bundle(out_dir, resolution: int = 64) -> dict:
    """Write the chair fitting fixture as CLI inputs; returns the file names."""
    from pathlib import Path

    from . import io
    from .prior import fit_reference_stats

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = fit_scene(resolution)
    files = {"model": "chair.urdf", "target": "target.voxg", "body": "body_params.json",
             "body_asset": "body.npz", "init": "init_pose.json", "prior_stats": "prior_stats.json"}
    io.atomic_write(out / files["model"], io.serialize_kinematic_xml(s.model, "chair"))
    for part, mesh in zip(s.model.parts, s.local_meshes):
        io.save_mesh(out / part.meshes[0][0], mesh)
    io.save_voxel(out / files["target"], s.target())
    io.write_json(out / files["body"], s.body_params.to_dict())
    io.save_body_asset(out / files["body_asset"], s.body_model)
    R = axis_angle_to_matrix(np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0), np.deg2rad(BUNDLE_INIT_ROTATION_DEG))
    init = PartPose(matrix_to_rot6d(R), s.gt_root.translation + np.asarray(BUNDLE_INIT_SHIFT))
    io.write_json(out / files["init"], io.pose_to_dict(init))
    stats = fit_reference_stats([(s.human, s.target())], metadata={"source": "chair fixture ground truth"})
    io.atomic_write(out / files["prior_stats"], stats.to_json() + "\n")
    return files
