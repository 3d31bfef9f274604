"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
import filecmp
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from artifit.align import GicpConfig, gicp_align, temporal_align, tlcc_offset
from artifit.body import pose_body
from artifit.fixtures import (fit_scene, noisy_sinusoid, penetration_scenes, random_rigid,
                              three_planes)
from artifit.geometry import (chamfer_distance, circumscribed_sphere, contact_value, penetration_depth,
                              sample_surface)
from artifit.kinematics import (PRISMATIC, REVOLUTE, REVOLUTE_PRISMATIC, Joint, KinematicModel, Part,
                                PartPose, homogeneous, matrix_to_rot6d, part_transforms, rot6d_to_matrix,
                                rotvec_to_matrix)
from artifit.metrics import pa_mpjpe
from artifit.optimizer import FitConfig, fit_object_pose, remove_penetration
from artifit.prior import (AnalyticEncoder, LatentGaussian, fit_reference_stats, loss_contrastive, loss_kl,
                           loss_pene, perturb_object)
from artifit.voxel import GridSpec, VoxelGrid, resample_gradient_error, voxel_iou

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    """Print a verdict line past pytest's output capture and return the verdict."""
    def _report(n, ok, detail, elapsed, budget):
        ok = bool(ok) and elapsed < budget
        limit = f", budget {budget:.0f} s" if np.isfinite(budget) else ""
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{elapsed:.1f} s{limit}]"
        with capsys.disabled():
            print("\n" + line)
        return ok
    return _report


def test_c01_rotation_round_trip(report):
    t0 = time.perf_counter()
    Rs = Rotation.random(10_000, random_state=1).as_matrix()
    trip = orth = det = 0.0
    for R in Rs:
        D = rot6d_to_matrix(matrix_to_rot6d(R))
        trip = max(trip, np.abs(D - R).max())
        orth = max(orth, np.abs(D.T @ D - np.eye(3)).max())
        det = max(det, abs(np.linalg.det(D) - 1.0))
    for r in np.random.default_rng(1).normal(size=(10_000, 6)):
        D = rot6d_to_matrix(r)
        orth = max(orth, np.abs(D.T @ D - np.eye(3)).max())
        det = max(det, abs(np.linalg.det(D) - 1.0))
    ok = trip < 1e-9 and orth < 1e-9 and det < 1e-9
    assert report(1, ok, f"round trip {trip:.1e}, orthonormality {orth:.1e}, |det-1| {det:.1e}",
                  time.perf_counter() - t0, 5)


def _motion(kind, axis, q):
    M = np.eye(4)
    if kind in (REVOLUTE, REVOLUTE_PRISMATIC):
        M[:3, :3] = Rotation.from_rotvec(axis * q[0]).as_matrix()
    if kind == PRISMATIC:
        M[:3, 3] = axis * q[0]
    if kind == REVOLUTE_PRISMATIC:
        M[:3, 3] = axis * q[1]
    return M


def test_c02_forward_kinematics_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    kinds = (REVOLUTE, PRISMATIC, REVOLUTE_PRISMATIC)
    worst = 0.0
    for trial in range(100):
        joints = []
        for i in range(2):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            origin = homogeneous(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
            # alternate serial chains with a root that has two children
            parent = 0 if trial % 2 else i
            joints.append(Joint(kinds[rng.integers(3)], parent, i + 1, axis=axis, origin=origin))
        model = KinematicModel(tuple(Part(f"p{i}") for i in range(3)), tuple(joints))
        root = PartPose.from_matrix(homogeneous(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3)))
        state = rng.uniform(-2, 2, size=model.n_dof)
        oracle, k = [root.homogeneous()], 0
        for j in model.joints:
            oracle.append(oracle[j.parent] @ j.origin @ _motion(j.kind, j.axis, state[k:k + j.dof]))
            k += j.dof
        got = part_transforms(model, root, state)
        worst = max(worst, np.abs(got - np.array(oracle)).max())
    assert report(2, worst < 1e-9, f"max deviation from matrix product {worst:.1e} m",
                  time.perf_counter() - t0, 5)


def test_c03_resampling_gradients(report):
    t0 = time.perf_counter()
    s = fit_scene(32)
    rng = np.random.default_rng(3)
    errs = []
    for _ in range(100):
        r6 = matrix_to_rot6d(rotvec_to_matrix(rng.normal(size=3))) * rng.uniform(0.5, 2.0, 6)
        root = PartPose(r6, rng.uniform(-0.2, 0.2, 3))
        errs.append(resample_gradient_error(s.model, s.part_grids, root, rng.uniform(-0.7, 0.7, 1)))
    worst = max(errs)
    assert report(3, worst < 1e-4, f"max relative gradient error {worst:.1e} over {len(errs)} poses",
                  time.perf_counter() - t0, 120)


def test_c04_render_and_recover(report):
    t0 = time.perf_counter()
    s = fit_scene(64)
    good = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        gt_state = rng.uniform(-np.deg2rad(20), np.deg2rad(20), 1)
        target = s.render(s.gt_root, gt_state)
        root, _ = perturb_object(s.model, s.gt_root, gt_state, (15, 100, 0), seed=seed)
        # the joint starts at zero, up to 20 degrees from the truth
        r = fit_object_pose(target, s.model, s.part_grids, root, cfg=FitConfig(lambda_z=0))
        dj = np.rad2deg(abs(r.state[0] - gt_state[0]))
        dt = np.linalg.norm(r.root.translation - s.gt_root.translation) * 1000
        good += dj < 2 and dt < 62.5
    assert report(4, good >= 18, f"{good}/20 recovered within 2 deg and 62.5 mm",
                  time.perf_counter() - t0, 1200)


def test_c05_prior_pull_in(report):
    t0 = time.perf_counter()
    s = fit_scene(64)
    enc = AnalyticEncoder(fit_reference_stats([(s.human, s.target())]))
    body = s.body_surface()
    better = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = np.array([0, -0.5, -1.0]) + rng.normal(scale=0.25, size=3)
        root = PartPose(s.gt_root.rotation, s.gt_root.translation + 0.3 * d / np.linalg.norm(d))
        c0 = contact_value(body, s.object_surface(root, np.zeros(1)))
        r = fit_object_pose(s.target(), s.model, s.part_grids, root, human=s.human, prior=enc,
                            cfg=FitConfig(lambda_z=0.1, lambda_r=0.0))
        better += contact_value(body, s.object_surface(r.root, r.state)) < c0
    assert report(5, better >= 18, f"{better}/20 seeds end closer to contact",
                  time.perf_counter() - t0, 1200)


def test_c06_prior_losses(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    kl = 0.0
    for _ in range(1000):
        d = rng.integers(1, 16)
        mu, sigma = rng.normal(size=d), rng.uniform(0.05, 4, size=d)
        expect = sum(0.5 * (m * m + v * v - 1) - np.log(v) for m, v in zip(mu, sigma))
        kl = max(kl, abs(loss_kl(LatentGaussian(mu, sigma)) - expect))
    pene = 0.0
    for _ in range(20):
        spec = GridSpec.cube(8)
        h, o = rng.random((8, 8, 8)), rng.random((8, 8, 8))
        expect = sum(x * y for x, y in zip(h.ravel(), o.ravel())) / h.size
        pene = max(pene, abs(loss_pene(VoxelGrid(spec, h), VoxelGrid(spec, o)) - expect))
    hinge = [(0.5, 1.0, 0.0), (1.0, 0.5, 0.5), (0.7, 0.7, 0.0), (2.0, 0.0, 2.0), (0.0, 3.0, 0.0)]
    hinge_ok = all(loss_contrastive(p, n) == e for p, n, e in hinge)
    ok = kl < 1e-9 and pene < 1e-12 and hinge_ok
    assert report(6, ok, f"KL {kl:.1e}, overlap {pene:.1e}, hinge cases {'exact' if hinge_ok else 'wrong'}",
                  time.perf_counter() - t0, 5)


def test_c07_penetration_removal(report):
    t0 = time.perf_counter()
    rows = []
    for sc in penetration_scenes():
        r = remove_penetration(sc.body_model, sc.params, sc.surface)
        body = pose_body(sc.body_model, r.params).mesh()
        c = contact_value(sample_surface(body, 20000, 0), sc.surface)
        rows.append((r.depth_before_mm, r.depth_after_mm, c))
    rows = np.array(rows)
    ok = len(rows) >= 5 and np.all(rows[:, 1] < 0.5 * rows[:, 0]) and np.all(rows[:, 2] <= 20)
    detail = ", ".join(f"{b:.1f}->{a:.1f} mm (contact {c:.1f})" for b, a, c in rows)
    assert report(7, ok, detail, time.perf_counter() - t0, 300)


def _rigid_error(res, T):
    dR = res.rotation @ T[:3, :3].T
    angle = np.rad2deg(np.arccos(np.clip((np.trace(dR) - 1) / 2, -1, 1)))
    return angle, np.linalg.norm(res.translation - T[:3, 3]) * 1000


def test_c08_gicp(report):
    t0 = time.perf_counter()
    Q = three_planes(2000)
    rng = np.random.default_rng(0)
    errs, slower = [], 0
    for _ in range(50):
        T = random_rigid(rng, 30, 0.5)
        Ti = np.linalg.inv(T)
        P = Q @ Ti[:3, :3].T + Ti[:3, 3] + rng.normal(scale=0.002, size=Q.shape)
        fast = gicp_align(P, Q)
        plain = gicp_align(P, Q, GicpConfig(accelerate=False))
        errs.append(_rigid_error(fast, T))
        slower += fast.iterations > plain.iterations
    p95 = np.percentile(np.array(errs), 95, axis=0)
    ok = p95[0] <= 0.5 and p95[1] <= 5 and slower == 0
    assert report(8, ok, f"95th percentile {p95[0]:.3f} deg / {p95[1]:.2f} mm, "
                         f"accelerated slower in {slower}/50 trials", time.perf_counter() - t0, 300)


def test_c09_tlcc(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    exact = median_ok = 0
    for _ in range(100):
        s = int(rng.integers(-100, 101))
        A, B = [], []
        for _ in range(3):
            base = noisy_sinusoid(1400, rng, snr_db=10.0)
            A.append(base[200:1200])
            B.append(base[200 - s:1200 - s])
        res = temporal_align(A, B, max_lag=100)
        per_joint = [tlcc_offset(a, b, 100)[0] for a, b in zip(A, B)]
        exact += res.lag == s
        median_ok += res.lag == int(np.median(per_joint)) and res.lags == per_joint
    ok = exact >= 95 and median_ok == 100
    assert report(9, ok, f"exact lag in {exact}/100 trials, median aggregation matches in {median_ok}/100",
                  time.perf_counter() - t0, 30)


def _horn(X, Y):
    mx, my = X.mean(0), Y.mean(0)
    A, B = X - mx, Y - my
    S = A.T @ B
    N = np.array([
        [S[0, 0] + S[1, 1] + S[2, 2], S[1, 2] - S[2, 1], S[2, 0] - S[0, 2], S[0, 1] - S[1, 0]],
        [S[1, 2] - S[2, 1], S[0, 0] - S[1, 1] - S[2, 2], S[0, 1] + S[1, 0], S[2, 0] + S[0, 2]],
        [S[2, 0] - S[0, 2], S[0, 1] + S[1, 0], -S[0, 0] + S[1, 1] - S[2, 2], S[1, 2] + S[2, 1]],
        [S[0, 1] - S[1, 0], S[2, 0] + S[0, 2], S[1, 2] + S[2, 1], -S[0, 0] - S[1, 1] + S[2, 2]],
    ])
    q = np.linalg.eigh(N)[1][:, -1]
    R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    s = np.sum(B * (A @ R.T)) / np.sum(A * A)
    return s, R, my - s * R @ mx


def test_c10_metric_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    cd = 0.0
    for _ in range(10):
        a, b = rng.normal(size=(300, 3)), rng.normal(size=(250, 3)) + 0.1
        D = np.linalg.norm(a[:, None] - b[None], axis=2)
        cd = max(cd, abs(chamfer_distance(a, b) - 500.0 * (D.min(1).mean() + D.min(0).mean())))
    iou_ok = True
    for _ in range(10):
        ga, gb = VoxelGrid(GridSpec.cube(8), rng.random((8,) * 3)), VoxelGrid(GridSpec.cube(8), rng.random((8,) * 3))
        inter = union = 0
        for idx in np.ndindex(8, 8, 8):
            x, y = ga.occupancy[idx] >= 0.5, gb.occupancy[idx] >= 0.5
            inter += x and y
            union += x or y
        iou_ok &= voxel_iou(ga, gb) == inter / union
    pa = 0.0
    for _ in range(20):
        G = rng.normal(size=(22, 3))
        E = 0.8 * G @ Rotation.random(random_state=rng).as_matrix().T + rng.normal(scale=0.05, size=(22, 3))
        s, R, t = _horn(E, G)
        oracle = np.mean(np.linalg.norm(G - (s * E @ R.T + t), axis=1)) * 1000
        pa = max(pa, abs(pa_mpjpe(G, E)[1] - oracle))
    mesh, normals = circumscribed_sphere(2, 1.0)
    depth_t = rng.uniform(0.05, 0.95, size=50)
    idx = rng.integers(0, len(normals), size=50)
    pen = penetration_depth(mesh, depth_t[:, None] * normals[idx])
    sphere = max(np.abs(pen.depths_mm - 1000.0 * (1 - depth_t)).max(),
                 abs(pen.depth_mm - 1000.0 * (1 - depth_t.min())))
    ok = cd < 1e-9 and iou_ok and pa < 1e-6 and sphere < 1e-6
    assert report(10, ok, f"chamfer {cd:.1e} mm, IoU {'exact' if iou_ok else 'mismatch'}, "
                          f"PA-MPJPE {pa:.1e} mm, sphere depth {sphere:.1e} mm", time.perf_counter() - t0, 60)


def test_c11_pipeline_determinism(report, tmp_path):
    t0 = time.perf_counter()
    codes = []
    for name in ("a", "b"):
        cmd = [sys.executable, "-m", "artifit.cli", "fit", "--out", str(tmp_path / name), "--seed", "7", "--quiet"]
        codes.append(subprocess.run(cmd, env=dict(os.environ), capture_output=True).returncode)
    files = sorted(p.name for p in (tmp_path / "a").iterdir()) if (tmp_path / "a").exists() else []
    same = bool(files) and files == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files)
    ok = codes == [0, 0] and same
    assert report(11, ok, f"exit codes {codes}, {len(files)} artifacts {'identical' if same else 'differ'}",
                  time.perf_counter() - t0, float("inf"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
