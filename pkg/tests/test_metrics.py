import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from artifit.fixtures import fit_scene
from artifit.kinematics import PartPose, homogeneous
from artifit.metrics import (CSV_COLUMNS, DegenerateProcrustesError, Scene, eval_report, pa_mpjpe,
                             part_pose_errors, procrustes, reports_to_csv, rotation_angle)


def test_pose_errors_examples():
    poses = [PartPose.identity(), PartPose([0, 1, 0, -1, 0, 0], [1, 2, 3])]
    e = part_pose_errors(poses, poses)
    assert e.mean_rotation_deg == 0 and e.mean_translation_mm == 0
    Rz = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    e = part_pose_errors([PartPose.identity()], [PartPose.from_matrix(homogeneous(Rz, [0, 0, 0]))])
    assert e.rotation_deg[0] == pytest.approx(90.0, abs=1e-12)


def test_pose_errors_match_quaternion_oracle(rng):
    for _ in range(100):
        a, b = Rotation.random(2, random_state=rng)
        e = part_pose_errors([PartPose.from_matrix(homogeneous(a.as_matrix(), np.zeros(3)))],
                             [PartPose.from_matrix(homogeneous(b.as_matrix(), np.zeros(3)))])
        q = abs(np.dot(a.as_quat(), b.as_quat()))
        assert abs(e.rotation_deg[0] - np.rad2deg(2 * np.arccos(min(q, 1.0)))) < 1e-6


def test_rotation_angle_near_pi():
    R = Rotation.from_rotvec([0, 0, np.pi - 1e-9]).as_matrix()
    assert rotation_angle(R) == pytest.approx(np.pi - 1e-9, abs=1e-7)


def horn_similarity(X, Y):
    """Similarity from Horn's unit-quaternion closed form."""
    mx, my = X.mean(0), Y.mean(0)
    A, B = X - mx, Y - my
    S = A.T @ B
    N = np.array([
        [S[0, 0] + S[1, 1] + S[2, 2], S[1, 2] - S[2, 1], S[2, 0] - S[0, 2], S[0, 1] - S[1, 0]],
        [S[1, 2] - S[2, 1], S[0, 0] - S[1, 1] - S[2, 2], S[0, 1] + S[1, 0], S[2, 0] + S[0, 2]],
        [S[2, 0] - S[0, 2], S[0, 1] + S[1, 0], -S[0, 0] + S[1, 1] - S[2, 2], S[1, 2] + S[2, 1]],
        [S[0, 1] - S[1, 0], S[2, 0] + S[0, 2], S[1, 2] + S[2, 1], -S[0, 0] - S[1, 1] + S[2, 2]],
    ])
    w, V = np.linalg.eigh(N)
    q = V[:, -1]
    R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    s = np.sum(B * (A @ R.T)) / np.sum(A * A)
    return s, R, my - s * R @ mx


def test_pa_mpjpe_examples(rng):
    J = rng.normal(size=(22, 3))
    assert pa_mpjpe(J, J) == (0.0, 0.0)
    T = homogeneous(Rotation.random(random_state=rng).as_matrix(), [0.3, -0.2, 0.1])
    mp, pa = pa_mpjpe(J, J @ T[:3, :3].T + T[:3, 3])
    assert mp > 0 and pa < 1e-6


def test_pa_mpjpe_matches_horn(rng):
    for _ in range(20):
        G = rng.normal(size=(22, 3))
        E = 0.8 * G @ Rotation.random(random_state=rng).as_matrix().T + rng.normal(scale=0.05, size=(22, 3))
        s, R, t = horn_similarity(E, G)
        oracle = np.mean(np.linalg.norm(G - (s * E @ R.T + t), axis=1)) * 1000
        assert abs(pa_mpjpe(G, E)[1] - oracle) < 1e-6


def test_procrustes_reflection_is_excluded(rng):
    X = rng.normal(size=(10, 3))
    Y = X * [1, 1, -1]
    _, R, _ = procrustes(X, Y)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_procrustes_rejects_collinear():
    X = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateProcrustesError):
        procrustes(X, X)


@pytest.fixture(scope="module")
def scenes():
    s = fit_scene(32)
    body = s.body.mesh()

    def scene(shift=(0, 0, 0)):
        return Scene(s.model, s.local_meshes, PartPose(s.gt_root.rotation, s.gt_root.translation + np.asarray(shift)),
                     s.gt_state, body, s.body.joints)

    return scene


def test_report_identical_scenes(scenes):
    r = eval_report(scenes(), scenes(), resolution=64, samples=4000)
    assert r.mean_rotation_deg == 0 and r.mean_translation_mm == 0
    assert r.chamfer_mm == 0 and r.iou_percent == 100.0 and r.penetration_mm == 0
    assert r.mpjpe_mm == 0 and r.pa_mpjpe_mm == 0


def test_report_translated_object(scenes):
    r = eval_report(scenes(), scenes((0.1, 0, 0)), resolution=64, samples=4000)
    assert r.mean_translation_mm == pytest.approx(100.0)
    assert r.chamfer_mm > 0 and r.iou_percent < 100


def test_report_contact_is_clipped(scenes):
    d = 0.35 * np.array([0, -1, -1]) / np.sqrt(2)
    r = eval_report(scenes(), scenes(d), resolution=32, samples=4000)
    assert r.contact_mm == 200.0


def test_marching_cubes_pathway(scenes):
    r = eval_report(scenes(), scenes(), resolution=64, samples=4000, cd_pathway="marching_cubes")
    # the isosurface of a 64^3 grid stays within a cell of the mesh
    assert 0 < r.chamfer_mm < 2000 / 64
    with pytest.raises(ValueError):
        eval_report(scenes(), scenes(), cd_pathway="other")


def test_csv_columns(scenes):
    r = eval_report(scenes(), scenes(), resolution=32, samples=1000)
    text = reports_to_csv([r, r], frames=["a", "b"])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert [ln.split(",")[0] for ln in lines[1:]] == ["a", "b"]
