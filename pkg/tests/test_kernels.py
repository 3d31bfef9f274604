import os
import subprocess
import sys

import numpy as np
import pytest

from artifit import _kernels_py, kernels
from artifit.fixtures import chair_local_meshes
from artifit.geometry import box_mesh, concatenate_meshes, icosphere
from artifit.kinematics import rot6d_jacobian, rot6d_to_matrix

ck = pytest.importorskip("artifit._ckernels")


def _sample_case(rng, res=12, want_grad=True):
    grid = rng.random((res, res, res))
    r6 = np.array([1.0, 0.05, 0.0, -0.05, 1.0, 0.1]) + rng.normal(scale=0.1, size=6)
    dA = np.zeros((9, 3, 3))
    dA[:6] = np.transpose(rot6d_jacobian(r6), (0, 2, 1))
    db = np.zeros((9, 3))
    db[6:] = np.eye(3)
    lo = rng.integers(0, 3, size=3).astype(np.int64)
    return (grid, np.full(3, -1.0), np.full(3, 2.0 / res), rot6d_to_matrix(r6).T, rng.normal(scale=0.1, size=3),
            dA, db, lo, np.full(3, res, dtype=np.int64), want_grad)


def _assert_close(a, b, tol):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _assert_close(x, y, tol)
    elif a is None:
        assert b is None
    else:
        np.testing.assert_allclose(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), atol=tol)


@pytest.mark.parametrize("want_grad", [True, False])
def test_sample_affine_parity(rng, want_grad):
    for _ in range(5):
        case = _sample_case(rng, want_grad=want_grad)
        _assert_close(_kernels_py.sample_affine(*case), ck.sample_affine(*case), 1e-12)


def test_mesh_kernels_parity(rng):
    mesh = concatenate_meshes(chair_local_meshes() + [icosphere(2, 0.2)])
    pts = rng.uniform(-0.5, 0.5, size=(300, 3))
    args = (pts, mesh.vertices, mesh.triangles)
    _assert_close(_kernels_py.winding_numbers(*args), ck.winding_numbers(*args), 1e-10)
    # on-surface queries have no defined winding number but a well-defined closest point
    args = (np.vstack([pts, mesh.vertices[:20]]), mesh.vertices, mesh.triangles)
    _assert_close(_kernels_py.closest_points(*args), ck.closest_points(*args), 1e-12)


def test_winding_inside_outside_both_backends():
    box = box_mesh((1.0, 1.0, 1.0))
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    for impl in (_kernels_py, ck):
        np.testing.assert_allclose(impl.winding_numbers(pts, box.vertices, box.triangles), [1.0, 0.0], atol=1e-12)


def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, ARTIFIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from artifit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
