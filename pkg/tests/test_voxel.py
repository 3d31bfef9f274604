import numpy as np
import pytest

from artifit.body import make_test_body, pose_body
from artifit.fixtures import chair_local_meshes, part_grids, two_part_chair
from artifit.geometry import PointSet, icosphere
from artifit.kinematics import PartPose
from artifit.voxel import (GridSpec, MultiResVoxel, ShapeError, VoxelGrid, max_pool, multires_voxelize,
                           resample_gradient_error, resample_transformed, voxel_iou, voxel_l1, voxel_l2,
                           voxelize)


def test_single_point_at_centre():
    grid, dropped = voxelize(PointSet([[0.0, 0.0, 0.0]]), GridSpec.cube(32))
    assert dropped == 0
    assert grid.occupancy.sum() == 1 and grid.occupancy[16, 16, 16] == 1


def test_all_points_dropped():
    grid, dropped = voxelize(PointSet([[5.0, 0, 0], [0, -7, 0]]), GridSpec.cube(16))
    assert dropped == 2 and grid.occupancy.sum() == 0


def test_solid_sphere_volume():
    spec = GridSpec.cube(64)
    grid, _ = voxelize(icosphere(4, 0.5), spec, "solid")
    vol = grid.occupancy.sum() * np.prod(spec.cell_size)
    assert abs(vol / (4 / 3 * np.pi * 0.125) - 1) < 0.03


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec((1, 4, 4))
    with pytest.raises(ValueError):
        GridSpec((4, 4, 4), extent=0.0)


@pytest.fixture(scope="module")
def body_grids():
    return multires_voxelize(pose_body(make_test_body(), make_test_body().zero_params()), 8)


def test_multires_counts_grow(body_grids):
    counts = [g.occupancy.sum() for g in body_grids.levels]
    assert [g.spec.resolution[0] for g in body_grids.levels] == [8, 16, 32, 64]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_multires_coarse_is_max_pool(body_grids):
    fine = body_grids.finest
    for k, g in enumerate(body_grids.levels[:-1]):
        np.testing.assert_array_equal(g.occupancy, max_pool(fine, 2 ** (3 - k)).occupancy)


def test_multires_empty_body():
    class Empty:
        vertices = np.zeros((0, 3))
        faces = np.zeros((0, 3), dtype=int)
        joints = np.zeros((1, 3))

    m = multires_voxelize(Empty(), 4)
    assert len(m.levels) == 4 and all(g.occupancy.sum() == 0 for g in m.levels)


def test_multires_levels_must_share_bounds():
    with pytest.raises(ShapeError):
        MultiResVoxel((VoxelGrid.zeros(GridSpec.cube(4)), VoxelGrid.zeros(GridSpec.cube(8, (0.1, 0, 0)))))


@pytest.fixture(scope="module")
def chair32():
    model = two_part_chair()
    return model, part_grids(model, chair_local_meshes(), GridSpec.cube(32))


def test_identity_pose_is_max_of_parts(chair32):
    model, grids = chair32
    res = resample_transformed(model, grids, PartPose.identity(), [0.0], want_grad=False)
    expect = np.maximum(grids[0].occupancy, grids[1].occupancy)
    np.testing.assert_allclose(res.grid.occupancy, expect, atol=1e-9)


def test_one_cell_shift(chair32):
    model, grids = chair32
    cell = grids[0].spec.cell_size[0]
    base = resample_transformed(model, grids, PartPose.identity(), [0.0], want_grad=False).grid.occupancy
    moved = resample_transformed(model, grids, PartPose([1, 0, 0, 0, 1, 0], [cell, 0, 0]), [0.0],
                                 want_grad=False).grid.occupancy
    np.testing.assert_allclose(moved[1:], base[:-1], atol=1e-9)


def test_gradient_matches_differences(chair32):
    model, grids = chair32
    rng = np.random.default_rng(3)
    for _ in range(5):
        R6 = np.array([1, 0, 0, 0, 1, 0]) + rng.normal(scale=0.1, size=6)
        root = PartPose(R6, rng.normal(scale=0.05, size=3))
        assert resample_gradient_error(model, grids, root, rng.uniform(-0.5, 0.5, 1)) < 1e-4


def test_gradient_shape(chair32):
    model, grids = chair32
    res = resample_transformed(model, grids, PartPose.identity(), [0.2])
    assert res.grad.shape == (10,) + grids[0].spec.resolution


def _grid(cells, res=4):
    occ = np.zeros((res,) * 3)
    for c in cells:
        occ[c] = 1.0
    return VoxelGrid(GridSpec.cube(res), occ)


def test_iou_examples():
    a = _grid([(0, 0, 0), (1, 1, 1)])
    assert voxel_iou(a, a) == 1.0
    assert voxel_iou(a, _grid([(3, 3, 3)])) == 0.0
    cells = [(i, j, k) for i in range(2) for j in range(2) for k in range(2)]
    A = _grid(cells)
    B = _grid(cells[:4] + [(3, 3, k) for k in range(4)])
    assert voxel_iou(A, B) == pytest.approx(4 / 12)


def test_iou_matches_exhaustive_count(rng):
    a = VoxelGrid(GridSpec.cube(8), rng.random((8, 8, 8)))
    b = VoxelGrid(GridSpec.cube(8), rng.random((8, 8, 8)))
    A, B = a.occupancy >= 0.5, b.occupancy >= 0.5
    inter = sum(1 for idx in np.ndindex(A.shape) if A[idx] and B[idx])
    union = sum(1 for idx in np.ndindex(A.shape) if A[idx] or B[idx])
    assert voxel_iou(a, b) == inter / union


def test_l1_l2_examples(rng):
    a = VoxelGrid(GridSpec.cube(4), rng.random((4, 4, 4)))
    assert voxel_l1(a, a) == 0 and voxel_l2(a, a) == 0
    z, o = np.zeros((4, 4, 4)), np.zeros((4, 4, 4))
    o[1, 2, 3] = 1.0
    assert voxel_l1(VoxelGrid(a.spec, z), VoxelGrid(a.spec, o)) == pytest.approx(1 / 64)
    assert voxel_l2(VoxelGrid(a.spec, z), VoxelGrid(a.spec, o)) == pytest.approx(1.0)


def test_l1_l2_match_summation(rng):
    a = VoxelGrid(GridSpec.cube(6), rng.random((6, 6, 6)))
    b = VoxelGrid(GridSpec.cube(6), rng.random((6, 6, 6)))
    d = (a.occupancy - b.occupancy).ravel()
    assert abs(voxel_l1(a, b) - sum(abs(v) for v in d) / d.size) < 1e-9
    assert abs(voxel_l2(a, b) - np.sqrt(sum(v * v for v in d))) < 1e-9


def test_mismatched_specs_raise():
    with pytest.raises(ShapeError):
        voxel_l1(VoxelGrid.zeros(GridSpec.cube(4)), VoxelGrid.zeros(GridSpec.cube(8)))
