import numpy as np
import pytest

from artifit.fixtures import fit_scene
from artifit.kinematics import PartPose
from artifit.metrics import rotation_angle
from artifit.prior import (LATENT_DIM, AnalyticEncoder, LatentGaussian, ReferenceStats, encode_analytic,
                           fit_reference_stats, interaction_features, loss_contrastive, loss_kl, loss_pene,
                           loss_recon, perturb_object, prior_loss)
from artifit.voxel import GridSpec, VoxelGrid, voxel_l1


def test_kl_examples():
    assert loss_kl(LatentGaussian(np.zeros(5), np.ones(5))) == 0.0
    assert loss_kl(LatentGaussian([1.0], [1.0])) == pytest.approx(0.5, abs=1e-15)
    assert loss_kl(LatentGaussian([0.0], [2.0])) == pytest.approx(0.5 * (4 - 1 - np.log(4)), abs=1e-12)


def test_kl_closed_form(rng):
    for _ in range(1000):
        d = rng.integers(1, 10)
        mu, sigma = rng.normal(size=d), rng.uniform(0.1, 3, size=d)
        expect = sum(0.5 * (m * m + s * s - 1 - 2 * np.log(s)) for m, s in zip(mu, sigma))
        assert abs(loss_kl(LatentGaussian(mu, sigma)) - expect) < 1e-9


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        loss_kl(LatentGaussian([0.0], [0.0]))


def _grids(rng, n=6):
    spec = GridSpec.cube(n)
    return VoxelGrid(spec, rng.random((n,) * 3)), VoxelGrid(spec, rng.random((n,) * 3))


def test_pene_examples(rng):
    spec = GridSpec.cube(4)
    a, b = np.zeros((4, 4, 4)), np.zeros((4, 4, 4))
    a[:2], b[2:] = 1, 1
    assert loss_pene(VoxelGrid(spec, a), VoxelGrid(spec, b)) == 0
    ones = VoxelGrid(spec, np.ones((4, 4, 4)))
    assert loss_pene(ones, ones) == 1
    h, o = _grids(rng)
    expect = sum(x * y for x, y in zip(h.occupancy.ravel(), o.occupancy.ravel())) / h.occupancy.size
    assert abs(loss_pene(h, o) - expect) < 1e-12


def test_contrastive_hinge():
    assert loss_contrastive(0.5, 1.0) == 0
    assert loss_contrastive(1.0, 0.5) == 0.5
    assert loss_contrastive(0.7, 0.7) == 0


def test_recon_examples(rng):
    spec = GridSpec.cube(4)
    ones, zeros = VoxelGrid(spec, np.ones((4, 4, 4))), VoxelGrid.zeros(spec)
    assert loss_recon(ones, ones) == 0
    assert loss_recon(ones, zeros) == 1
    a, b = _grids(rng)
    assert abs(loss_recon(a, b) - voxel_l1(a, b)) < 1e-12


def test_prior_loss_total(rng):
    a, b = _grids(rng)
    q = LatentGaussian([1.0], [1.0])
    out = prior_loss(a, b, q, b, 1.0, 0.5)
    assert out.total == pytest.approx(out.recon + 0.5 + out.pene + 0.5)


@pytest.fixture(scope="module")
def scene():
    return fit_scene(32)


def test_perturb_zero_and_determinism(scene):
    root, state = perturb_object(scene.model, scene.gt_root, scene.gt_state, (0, 0, 0), seed=1)
    assert root is scene.gt_root and np.array_equal(state, scene.gt_state)
    a = perturb_object(scene.model, scene.gt_root, scene.gt_state, seed=7)
    b = perturb_object(scene.model, scene.gt_root, scene.gt_state, seed=7)
    assert np.array_equal(a[0].rotation, b[0].rotation) and np.array_equal(a[1], b[1])


def test_perturb_statistics(scene):
    angles, shifts, joints = [], [], []
    for s in range(1000):
        root, state = perturb_object(scene.model, scene.gt_root, scene.gt_state, (15, 100, 0.3), seed=s)
        angles.append(np.rad2deg(rotation_angle(root.matrix @ scene.gt_root.matrix.T)))
        shifts.append(np.linalg.norm(root.translation - scene.gt_root.translation) * 1000)
        joints.append(abs(state[0] - scene.gt_state[0]))
    assert max(angles) <= 15 + 1e-9 and max(shifts) <= 100 + 1e-9 and max(joints) <= 0.3
    # uniform magnitudes have mean half the bound
    assert abs(np.mean(angles) / 7.5 - 1) < 0.05
    assert abs(np.mean(shifts) / 50 - 1) < 0.05
    assert abs(np.mean(joints) / 0.15 - 1) < 0.05


def test_encoder_zero_at_reference(scene):
    target = scene.target()
    stats = fit_reference_stats([(scene.human, target)])
    z = encode_analytic(scene.human, target, stats)
    assert z.shape == (LATENT_DIM,)
    assert np.linalg.norm(z) < 1e-9


def test_encoder_grows_when_moved_away(scene):
    stats = fit_reference_stats([(scene.human, scene.target())])
    enc = AnalyticEncoder(stats)
    away = scene.render(PartPose(scene.gt_root.rotation, scene.gt_root.translation + [0, 0, 0.5]), scene.gt_state)
    assert np.linalg.norm(enc.encode(scene.human, away)) > np.linalg.norm(enc.encode(scene.human, scene.target()))


def test_overlap_grows_when_pushed_in(scene):
    stats = ReferenceStats.neutral()
    overlaps = []
    for dy in (0.0, 0.05, 0.1, 0.15):
        obj = scene.render(PartPose(scene.gt_root.rotation, scene.gt_root.translation + [0, dy, 0]), scene.gt_state)
        overlaps.append(interaction_features(scene.human, obj, stats)[0][0])
    assert all(a < b for a, b in zip(overlaps, overlaps[1:]))


def test_encoder_gradient_matches_differences(scene, rng):
    stats = fit_reference_stats([(scene.human, scene.target())])
    enc = AnalyticEncoder(stats)
    obj = scene.render(PartPose(scene.gt_root.rotation, scene.gt_root.translation + [0, 0, 0.1]), scene.gt_state)
    n, g = enc.norm_and_grad(scene.human, obj)
    occ = obj.occupancy
    for idx in [tuple(i) for i in np.argwhere(occ > 0)[rng.choice(int((occ > 0).sum()), 5)]]:
        h = 1e-6
        up, dn = occ.copy(), occ.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (np.linalg.norm(enc.encode(scene.human, VoxelGrid(obj.spec, up)))
              - np.linalg.norm(enc.encode(scene.human, VoxelGrid(obj.spec, dn)))) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_reference_stats_json_round_trip(scene):
    stats = fit_reference_stats([(scene.human, scene.target())])
    back = ReferenceStats.from_json(stats.to_json())
    np.testing.assert_array_equal(back.mean, stats.mean)
    np.testing.assert_array_equal(back.scale, stats.scale)
    assert back.contact_target == stats.contact_target
