"""Compare the compiled and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--resolution R]
"""

import argparse
import timeit

import numpy as np

from artifit import _kernels_py
from artifit.fixtures import chair_local_meshes
from artifit.geometry import concatenate_meshes, icosphere
from artifit.kinematics import rot6d_jacobian, rot6d_to_matrix

try:
    from artifit import _ckernels
except ImportError:
    _ckernels = None


def sample_case(res: int, rng):
    grid = (rng.random((res, res, res)) > 0.7).astype(np.float64)
    origin = np.full(3, -1.0)
    cell = np.full(3, 2.0 / res)
    r6 = np.array([1.0, 0.05, 0.0, -0.05, 1.0, 0.1])
    A = rot6d_to_matrix(r6).T
    b = np.array([0.02, -0.01, 0.03])
    # derivative of A and b with respect to 6D + translation
    dA = np.zeros((9, 3, 3))
    dA[:6] = np.transpose(rot6d_jacobian(r6), (0, 2, 1))
    db = np.zeros((9, 3))
    db[6:] = np.eye(3)
    lo, hi = np.zeros(3, dtype=np.int64), np.full(3, res, dtype=np.int64)
    return (grid, origin, cell, A, b, dA, db, lo, hi)


def mesh_case(n_points: int, rng):
    mesh = concatenate_meshes(chair_local_meshes() + [icosphere(3, 0.2)])
    pts = rng.uniform(-0.5, 0.5, size=(n_points, 3))
    return pts, mesh.vertices, mesh.triangles


def bench(fn, args, repeat):
    fn(*args)  # warm-up
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b) if x is not None)
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--points", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = [
        ("sample_affine", sample_case(args.resolution, rng)),
        ("winding_numbers", mesh_case(args.points, rng)),
        ("closest_points", mesh_case(args.points, rng)),
    ]
    print(f"{'kernel':<18}{'python (s)':>12}{'cython (s)':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, case in cases:
        t_py = bench(getattr(_kernels_py, name), case, args.repeat)
        if _ckernels is None:
            print(f"{name:<18}{t_py:>12.4f}{'n/a':>12}{'n/a':>10}{'n/a':>14}")
            continue
        t_c = bench(getattr(_ckernels, name), case, args.repeat)
        diff = max_diff(getattr(_kernels_py, name)(*case), getattr(_ckernels, name)(*case))
        print(f"{name:<18}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
