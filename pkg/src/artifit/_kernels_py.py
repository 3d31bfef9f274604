"""Pure-numpy implementations of the hot kernels.

Signatures mirror the compiled ``_ckernels`` module exactly; see
``artifit.kernels`` for backend selection.
"""

import numpy as np

_CHUNK = 4096


def sample_affine(grid, origin, cell, A, b, dA, db, lo, hi, want_grad=True):
    """Trilinearly sample ``grid`` at ``A @ x + b`` for output cell centres x.

    Output cells are the index box ``[lo, hi)`` of a grid with the same
    origin and cell size as ``grid``. Samples outside the grid read zero.

    Returns:
        ``(values, grads)`` with shapes ``box`` and ``(P,) + box`` where P is
        the number of parameters in ``dA``/``db``. ``grads`` is None when
        ``want_grad`` is false.
    """
    grid = np.asarray(grid, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    cell = np.asarray(cell, dtype=np.float64)
    n = np.array(grid.shape)
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    box = tuple(int(v) for v in np.maximum(hi - lo, 0))
    P = dA.shape[0]
    if min(box) == 0:
        return np.zeros(box), (np.zeros((P,) + box) if want_grad else None)

    axes = [origin[d] + (np.arange(lo[d], hi[d]) + 0.5) * cell[d] for d in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    Y = X @ A.T + b
    U = (Y - origin) / cell - 0.5
    I0 = np.floor(U).astype(np.int64)
    F = U - I0

    def fetch(ix, iy, iz):
        ok = (ix >= 0) & (ix < n[0]) & (iy >= 0) & (iy < n[1]) & (iz >= 0) & (iz < n[2])
        out = np.zeros(ix.shape)
        out[ok] = grid[ix[ok], iy[ok], iz[ok]]
        return out

    c = {}
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                c[dx, dy, dz] = fetch(I0[:, 0] + dx, I0[:, 1] + dy, I0[:, 2] + dz)
    fx, fy, fz = F[:, 0], F[:, 1], F[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c00 = c[0, 0, 0] * gz + c[0, 0, 1] * fz
    c01 = c[0, 1, 0] * gz + c[0, 1, 1] * fz
    c10 = c[1, 0, 0] * gz + c[1, 0, 1] * fz
    c11 = c[1, 1, 0] * gz + c[1, 1, 1] * fz
    c0 = c00 * gy + c01 * fy
    c1 = c10 * gy + c11 * fy
    values = c0 * gx + c1 * fx
    if not want_grad:
        return values.reshape(box), None

    du = np.empty_like(U)
    du[:, 0] = c1 - c0
    du[:, 1] = (c01 - c00) * gx + (c11 - c10) * fx
    dz0 = (c[0, 0, 1] - c[0, 0, 0]) * gy + (c[0, 1, 1] - c[0, 1, 0]) * fy
    dz1 = (c[1, 0, 1] - c[1, 0, 0]) * gy + (c[1, 1, 1] - c[1, 1, 0]) * fy
    du[:, 2] = dz0 * gx + dz1 * fx
    dy_ = du / cell
    # dY/dp = dA_p x + db_p
    dY = np.einsum("pij,nj->pni", dA, X) + db[:, None, :]
    grads = np.einsum("pni,ni->pn", dY, dy_)
    return values.reshape(box), grads.reshape((P,) + box)


def winding_numbers(points, vertices, faces):
    """Generalized winding number of each point w.r.t. a triangle mesh."""
    points = np.asarray(points, dtype=np.float64)
    V = np.asarray(vertices, dtype=np.float64)
    Fc = np.asarray(faces, dtype=np.int64)
    T0, T1, T2 = V[Fc[:, 0]], V[Fc[:, 1]], V[Fc[:, 2]]
    out = np.empty(len(points))
    step = max(1, _CHUNK * 64 // max(len(Fc), 1))
    for s in range(0, len(points), step):
        p = points[s:s + step, None, :]
        a, b, c = T0[None] - p, T1[None] - p, T2[None] - p
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        det = np.einsum("mfi,mfi->mf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("mfi,mfi->mf", a, b) * lc
               + np.einsum("mfi,mfi->mf", a, c) * lb + np.einsum("mfi,mfi->mf", b, c) * la)
        out[s:s + step] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
    return out


def _closest_on_triangles(p, a, b, c):
    """Closest points from each p (M,1,3) to triangles a,b,c (1,F,3)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast_shapes(p.shape, a.shape)
    out = np.empty(shape)
    done = np.zeros(shape[:-1], dtype=bool)

    def put(mask, val):
        nonlocal done
        m = mask & ~done
        out[m] = np.broadcast_to(val, shape)[m]
        done |= m

    A, B, C = (np.broadcast_to(x, shape) for x in (a, b, c))
    put((d1 <= 0) & (d2 <= 0), A)
    put((d3 >= 0) & (d4 <= d3), B)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + v[..., None] * ab)
        put((d6 >= 0) & (d5 <= d6), C)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), B + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(np.ones(shape[:-1], dtype=bool), A + ab * v[..., None] + ac * w[..., None])
    return out


def closest_points(points, vertices, faces):
    """Exact closest surface point of a triangle mesh for each query point.

    Returns ``(distance (M,), closest (M, 3), face index (M,))``; ties go to
    the lowest face index.
    """
    points = np.asarray(points, dtype=np.float64)
    V = np.asarray(vertices, dtype=np.float64)
    Fc = np.asarray(faces, dtype=np.int64)
    a, b, c = V[Fc[:, 0]][None], V[Fc[:, 1]][None], V[Fc[:, 2]][None]
    M = len(points)
    dist = np.empty(M)
    near = np.empty((M, 3))
    fidx = np.empty(M, dtype=np.int64)
    step = max(1, _CHUNK * 16 // max(len(Fc), 1))
    for s in range(0, M, step):
        p = points[s:s + step, None, :]
        q = _closest_on_triangles(p, a, b, c)
        d2 = np.sum((q - p) ** 2, axis=-1)
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(k))
        dist[s:s + step] = np.sqrt(d2[rows, k])
        near[s:s + step] = q[rows, k]
        fidx[s:s + step] = k
    return dist, near, fidx
