# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures as ``artifit._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, atan2, M_PI

cnp.import_array()


cdef inline double _fetch(const double[:, :, ::1] g, long i, long j, long k,
                          long nx, long ny, long nz) noexcept nogil:
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return 0.0
    return g[i, j, k]


def sample_affine(grid, origin, cell, A, b, dA, db, lo, hi, bint want_grad=True):
    cdef const double[:, :, ::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(cell, dtype=np.float64)
    cdef double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, :, ::1] dAm = np.ascontiguousarray(dA, dtype=np.float64)
    cdef double[:, ::1] dbm = np.ascontiguousarray(db, dtype=np.float64)
    cdef long lx = lo[0], ly = lo[1], lz = lo[2]
    cdef long bx = max(hi[0] - lo[0], 0), by = max(hi[1] - lo[1], 0), bz = max(hi[2] - lo[2], 0)
    cdef long P = dAm.shape[0]
    cdef long nx = g.shape[0], ny = g.shape[1], nz = g.shape[2]

    values_arr = np.zeros((bx, by, bz))
    cdef double[:, :, ::1] values = values_arr
    grads_arr = np.zeros((P, bx, by, bz)) if want_grad else np.zeros((0, 0, 0, 0))
    cdef double[:, :, :, ::1] grads = grads_arr

    cdef long i, j, k, p, i0, j0, k0
    cdef double x0, x1, x2, y0, y1, y2, u0, u1, u2, fx, fy, fz, gx, gy, gz
    cdef double c000, c001, c010, c011, c100, c101, c110, c111
    cdef double c00, c01, c10, c11, cc0, cc1, du0, du1, du2, dz0, dz1
    cdef double e0, e1, e2

    with nogil:
        for i in range(bx):
            x0 = o[0] + (i + lx + 0.5) * c[0]
            for j in range(by):
                x1 = o[1] + (j + ly + 0.5) * c[1]
                for k in range(bz):
                    x2 = o[2] + (k + lz + 0.5) * c[2]
                    y0 = Am[0, 0] * x0 + Am[0, 1] * x1 + Am[0, 2] * x2 + bv[0]
                    y1 = Am[1, 0] * x0 + Am[1, 1] * x1 + Am[1, 2] * x2 + bv[1]
                    y2 = Am[2, 0] * x0 + Am[2, 1] * x1 + Am[2, 2] * x2 + bv[2]
                    u0 = (y0 - o[0]) / c[0] - 0.5
                    u1 = (y1 - o[1]) / c[1] - 0.5
                    u2 = (y2 - o[2]) / c[2] - 0.5
                    i0 = <long>floor(u0)
                    j0 = <long>floor(u1)
                    k0 = <long>floor(u2)
                    if i0 < -1 or j0 < -1 or k0 < -1 or i0 >= nx or j0 >= ny or k0 >= nz:
                        continue
                    fx = u0 - i0
                    fy = u1 - j0
                    fz = u2 - k0
                    gx = 1.0 - fx
                    gy = 1.0 - fy
                    gz = 1.0 - fz
                    c000 = _fetch(g, i0, j0, k0, nx, ny, nz)
                    c001 = _fetch(g, i0, j0, k0 + 1, nx, ny, nz)
                    c010 = _fetch(g, i0, j0 + 1, k0, nx, ny, nz)
                    c011 = _fetch(g, i0, j0 + 1, k0 + 1, nx, ny, nz)
                    c100 = _fetch(g, i0 + 1, j0, k0, nx, ny, nz)
                    c101 = _fetch(g, i0 + 1, j0, k0 + 1, nx, ny, nz)
                    c110 = _fetch(g, i0 + 1, j0 + 1, k0, nx, ny, nz)
                    c111 = _fetch(g, i0 + 1, j0 + 1, k0 + 1, nx, ny, nz)
                    c00 = c000 * gz + c001 * fz
                    c01 = c010 * gz + c011 * fz
                    c10 = c100 * gz + c101 * fz
                    c11 = c110 * gz + c111 * fz
                    cc0 = c00 * gy + c01 * fy
                    cc1 = c10 * gy + c11 * fy
                    values[i, j, k] = cc0 * gx + cc1 * fx
                    if not want_grad:
                        continue
                    du0 = (cc1 - cc0) / c[0]
                    du1 = ((c01 - c00) * gx + (c11 - c10) * fx) / c[1]
                    dz0 = (c001 - c000) * gy + (c011 - c010) * fy
                    dz1 = (c101 - c100) * gy + (c111 - c110) * fy
                    du2 = (dz0 * gx + dz1 * fx) / c[2]
                    if du0 == 0.0 and du1 == 0.0 and du2 == 0.0:
                        continue
                    for p in range(P):
                        e0 = dAm[p, 0, 0] * x0 + dAm[p, 0, 1] * x1 + dAm[p, 0, 2] * x2 + dbm[p, 0]
                        e1 = dAm[p, 1, 0] * x0 + dAm[p, 1, 1] * x1 + dAm[p, 1, 2] * x2 + dbm[p, 1]
                        e2 = dAm[p, 2, 0] * x0 + dAm[p, 2, 1] * x1 + dAm[p, 2, 2] * x2 + dbm[p, 2]
                        grads[p, i, j, k] = du0 * e0 + du1 * e1 + du2 * e2
    return values_arr, (grads_arr if want_grad else None)


def winding_numbers(points, vertices, faces):
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef long M = P.shape[0], nF = F.shape[0]
    out_arr = np.zeros(M)
    cdef double[::1] out = out_arr
    cdef long m, f
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, la, lb, lc, det, den, acc
    with nogil:
        for m in range(M):
            acc = 0.0
            for f in range(nF):
                ax = V[F[f, 0], 0] - P[m, 0]
                ay = V[F[f, 0], 1] - P[m, 1]
                az = V[F[f, 0], 2] - P[m, 2]
                bx = V[F[f, 1], 0] - P[m, 0]
                by = V[F[f, 1], 1] - P[m, 1]
                bz = V[F[f, 1], 2] - P[m, 2]
                cx = V[F[f, 2], 0] - P[m, 0]
                cy = V[F[f, 2], 1] - P[m, 1]
                cz = V[F[f, 2], 2] - P[m, 2]
                la = sqrt(ax * ax + ay * ay + az * az)
                lb = sqrt(bx * bx + by * by + bz * bz)
                lc = sqrt(cx * cx + cy * cy + cz * cz)
                det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
                den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                       + (ax * cx + ay * cy + az * cz) * lb + (bx * cx + by * cy + bz * cz) * la)
                acc += atan2(det, den)
            out[m] = acc / (2.0 * M_PI)
    return out_arr


cdef inline void _closest(double px, double py, double pz,
                          double ax, double ay, double az,
                          double bx, double by, double bz,
                          double cx, double cy, double cz,
                          double* q) noexcept nogil:
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0 and d2 <= 0:
        q[0] = ax; q[1] = ay; q[2] = az
        return
    cdef double bpx = px - bx, bpy = py - by, bpz = pz - bz
    cdef double d3 = abx * bpx + aby * bpy + abz * bpz
    cdef double d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0 and d4 <= d3:
        q[0] = bx; q[1] = by; q[2] = bz
        return
    cdef double vc = d1 * d4 - d3 * d2
    cdef double v, w
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        q[0] = ax + v * abx; q[1] = ay + v * aby; q[2] = az + v * abz
        return
    cdef double cpx = px - cx, cpy = py - cy, cpz = pz - cz
    cdef double d5 = abx * cpx + aby * cpy + abz * cpz
    cdef double d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0 and d5 <= d6:
        q[0] = cx; q[1] = cy; q[2] = cz
        return
    cdef double vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        q[0] = ax + w * acx; q[1] = ay + w * acy; q[2] = az + w * acz
        return
    cdef double va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q[0] = bx + w * (cx - bx); q[1] = by + w * (cy - by); q[2] = bz + w * (cz - bz)
        return
    cdef double denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    q[0] = ax + abx * v + acx * w
    q[1] = ay + aby * v + acy * w
    q[2] = az + abz * v + acz * w


def closest_points(points, vertices, faces):
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef long M = P.shape[0], nF = F.shape[0]
    dist_arr = np.zeros(M)
    near_arr = np.zeros((M, 3))
    fidx_arr = np.zeros(M, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef double[:, ::1] near = near_arr
    cdef long[::1] fidx = fidx_arr
    cdef long m, f, best_f
    cdef double q[3]
    cdef double d, best, bx, by, bz, dx, dy, dz
    with nogil:
        for m in range(M):
            best = 1e300
            best_f = 0
            bx = by = bz = 0.0
            for f in range(nF):
                _closest(P[m, 0], P[m, 1], P[m, 2],
                         V[F[f, 0], 0], V[F[f, 0], 1], V[F[f, 0], 2],
                         V[F[f, 1], 0], V[F[f, 1], 1], V[F[f, 1], 2],
                         V[F[f, 2], 0], V[F[f, 2], 1], V[F[f, 2], 2], q)
                dx = q[0] - P[m, 0]
                dy = q[1] - P[m, 1]
                dz = q[2] - P[m, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
                    best_f = f
                    bx = q[0]; by = q[1]; bz = q[2]
            dist[m] = sqrt(best)
            near[m, 0] = bx; near[m, 1] = by; near[m, 2] = bz
            fidx[m] = best_f
    return dist_arr, near_arr, fidx_arr
