"""Articulated object pose fitting with an interaction prior, penetration
removal for parametric bodies, capture alignment and evaluation metrics."""

from .kernels import BACKEND
from .kinematics import (Joint, KinematicModel, Part, PartPose, forward_kinematics, part_transforms,
                         matrix_to_rot6d, rot6d_to_matrix)
from .voxel import GridSpec, MultiResVoxel, VoxelGrid, multires_voxelize, resample_transformed, voxelize
from .geometry import PointSet, TriMesh, chamfer_distance, contact_value, marching_cubes, penetration_depth
from .body import BodyModel, BodyParams, make_test_body, pose_body
from .prior import AnalyticEncoder, ReferenceStats, encode_analytic, fit_reference_stats
from .optimizer import FitConfig, FitResult, PenetrationConfig, fit_object_pose, remove_penetration
from .align import GicpConfig, gicp_align, temporal_align, tlcc_offset
from .metrics import Scene, eval_report, pa_mpjpe

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Joint", "KinematicModel", "Part", "PartPose", "forward_kinematics", "part_transforms",
    "matrix_to_rot6d", "rot6d_to_matrix", "GridSpec", "MultiResVoxel", "VoxelGrid", "multires_voxelize",
    "resample_transformed", "voxelize", "PointSet", "TriMesh", "chamfer_distance", "contact_value",
    "marching_cubes", "penetration_depth", "BodyModel", "BodyParams", "make_test_body", "pose_body",
    "AnalyticEncoder", "ReferenceStats", "encode_analytic", "fit_reference_stats", "FitConfig", "FitResult",
    "PenetrationConfig", "fit_object_pose", "remove_penetration", "GicpConfig", "gicp_align",
    "temporal_align", "tlcc_offset", "Scene", "eval_report", "pa_mpjpe", "__version__",
]
