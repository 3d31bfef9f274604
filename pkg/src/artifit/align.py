"""Capture registration: plane-to-plane ICP with Anderson acceleration for
space, time-lagged cross-correlation for time."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointSet
from .kinematics import homogeneous, matrix_to_rotvec, rotvec_to_matrix

log = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    """The registration problem does not constrain all six degrees of freedom."""


class UndefinedCorrelationError(ValueError):
    """A differenced sequence has zero variance."""


@dataclass
class GicpConfig:
    neighbors: int = 20
    max_iters: int = 50
    tol: float = 1e-9
    anderson_m: int = 5
    accelerate: bool = True
    epsilon: float = 1e-3
    inner_iters: int = 1
    max_correspondence: float | None = None
    accept_margin: float = 1e-4


@dataclass
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    residuals: list
    iterations: int
    converged: bool
    accepted_accelerations: int = 0

    @property
    def matrix(self) -> np.ndarray:
        return homogeneous(self.rotation, self.translation)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "matrix": self.matrix.tolist(),
            "residuals": [float(r) for r in self.residuals],
            "iterations": self.iterations,
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# Generalized ICP


def plane_covariances(points: np.ndarray, neighbors: int, epsilon: float, tree=None) -> np.ndarray:
    """Per-point covariances with eigenvalues replaced by (epsilon, 1, 1).

    The eigenvectors come from the ``neighbors`` nearest points (the point
    included); the smallest direction is the local surface normal.
    """
    tree = tree or cKDTree(points)
    _, idx = tree.query(points, k=neighbors)
    nb = points[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    C = np.einsum("nki,nkj->nij", nb, nb) / neighbors
    _, U = np.linalg.eigh(C)
    d = np.array([epsilon, 1.0, 1.0])
    return np.einsum("nij,j,nkj->nik", U, d, U)


def _x_to_rt(x):
    return rotvec_to_matrix(x[:3]), x[3:].copy()


def _rt_to_x(R, t):
    return np.concatenate([matrix_to_rotvec(R), t])


class _Gicp:
    def __init__(self, P, Q, cfg: GicpConfig):
        self.P, self.Q, self.cfg = P, Q, cfg
        self.tree_q = cKDTree(Q)
        self.CP = plane_covariances(P, cfg.neighbors, cfg.epsilon)
        self.CQ = plane_covariances(Q, cfg.neighbors, cfg.epsilon, self.tree_q)

    def correspond(self, R, t):
        Pt = self.P @ R.T + t
        dist, j = self.tree_q.query(Pt, k=1)
        keep = np.ones(len(Pt), dtype=bool) if self.cfg.max_correspondence is None else dist <= self.cfg.max_correspondence
        if keep.sum() < 6:
            raise DegenerateGeometryError("too few correspondences")
        return np.nonzero(keep)[0], j[keep]

    def cost(self, R, t, src, dst) -> float:
        Pt = self.P[src] @ R.T + t
        d = self.Q[dst] - Pt
        M = self.CQ[dst] + R @ self.CP[src] @ R.T
        return float(np.mean(np.einsum("ni,ni->n", d, np.linalg.solve(M, d[..., None])[..., 0])))

    def residual(self, x) -> float:
        """Objective with correspondences recomputed at ``x``."""
        R, t = _x_to_rt(x)
        src, dst = self.correspond(R, t)
        return self.cost(R, t, src, dst)

    def step(self, x):
        """One fixed-point map: fresh correspondences, then Gauss-Newton."""
        R, t = _x_to_rt(x)
        src, dst = self.correspond(R, t)
        P, Q = self.P[src], self.Q[dst]
        CP, CQ = self.CP[src], self.CQ[dst]
        r0 = self.cost(R, t, src, dst)
        for _ in range(self.cfg.inner_iters):
            Pt = P @ R.T + t
            d = Q - Pt
            W = np.linalg.inv(CQ + R @ CP @ R.T)
            # d(new) = d + [p']x w - v for the left update p' -> exp(w) p' + v
            J = np.zeros((len(P), 3, 6))
            J[:, 0, 1], J[:, 0, 2] = -Pt[:, 2], Pt[:, 1]
            J[:, 1, 0], J[:, 1, 2] = Pt[:, 2], -Pt[:, 0]
            J[:, 2, 0], J[:, 2, 1] = -Pt[:, 1], Pt[:, 0]
            J[:, :, 3:] = -np.eye(3)
            JW = np.einsum("nai,nab->nib", J, W)
            H = np.einsum("nib,nbj->ij", JW, J)
            b = np.einsum("nib,nb->i", JW, d)
            ev = np.linalg.eigvalsh(H)
            if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
                raise DegenerateGeometryError("rank-deficient normal equations")
            xi = -np.linalg.solve(H, b)
            dR = rotvec_to_matrix(xi[:3])
            R, t = dR @ R, dR @ t + xi[3:]
            if np.linalg.norm(xi) < 1e-14:
                break
        return _rt_to_x(R, t), r0


def gicp_align(source, target, cfg: GicpConfig | None = None, init=None) -> AlignmentResult:
    """Rigid transform T with ``T @ source ~ target``.

    Each iteration re-matches nearest neighbours and runs Gauss-Newton on
    the plane-to-plane Mahalanobis cost. With acceleration enabled, an
    Anderson extrapolation over the last ``anderson_m`` iterates (rotation
    vector + translation) is accepted only when its cost undercuts the
    plain iterate's by more than a relative ``accept_margin``. Iteration stops once the plain map moves the
    parameters by less than ``tol``.
    """
    cfg = cfg or GicpConfig()
    P = source.points if isinstance(source, PointSet) else np.asarray(source, dtype=np.float64)
    Q = target.points if isinstance(target, PointSet) else np.asarray(target, dtype=np.float64)
    n = cfg.neighbors
    if len(P) < n or len(Q) < n or n < 4:
        raise ValueError(f"need at least {max(n, 4)} points per cloud and neighbors >= 4")
    solver = _Gicp(P, Q, cfg)
    x = np.zeros(6) if init is None else _rt_to_x(np.asarray(init)[:3, :3], np.asarray(init)[:3, 3])
    X_hist, G_hist = [], []
    residuals = []
    converged = False
    accepted = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g, r = solver.step(x)
        residuals.append(r)
        if np.linalg.norm(g - x) < cfg.tol:
            x = g
            converged = True
            break
        x_next = g
        if cfg.accelerate and cfg.anderson_m > 0:
            X_hist.append(x.copy())
            G_hist.append(g.copy())
            X_hist, G_hist = X_hist[-(cfg.anderson_m + 1):], G_hist[-(cfg.anderson_m + 1):]
            if len(X_hist) >= 2:
                cand = _anderson(np.array(X_hist), np.array(G_hist))
                if cand is not None:
                    r_plain = solver.residual(g)
                    # rounding-level gains are not worth leaving the plain path
                    take = solver.residual(cand) < r_plain * (1.0 - cfg.accept_margin)
                else:
                    take = False
                if take:
                    x_next = cand
                    accepted += 1
        x = x_next
    R, t = _x_to_rt(x)
    return AlignmentResult(R, t, residuals, it, converged, accepted)


def _anderson(X: np.ndarray, G: np.ndarray):
    F = G - X
    dF = np.diff(F, axis=0).T
    dG = np.diff(G, axis=0).T
    gamma, *_ = np.linalg.lstsq(dF, F[-1], rcond=None)
    cand = G[-1] - dG @ gamma
    return cand if np.all(np.isfinite(cand)) else None


# ---------------------------------------------------------------------------
# Temporal alignment


@dataclass
class TimeOffset:
    lag: int
    lags: list
    peaks: list
    metadata: dict = field(default_factory=lambda: {"normalization": "pearson", "differenced": True})

    def to_dict(self) -> dict:
        return {"lag": int(self.lag), "lags": [int(v) for v in self.lags],
                "peaks": [float(v) for v in self.peaks], "metadata": self.metadata}


def tlcc_offset(a, b, max_lag: int, absolute: bool = False) -> tuple[int, float]:
    """Lag (frames) at which the differenced ``b`` best matches ``a``.

    ``b`` delayed by k frames relative to ``a`` (``b[t] = a[t - k]``) gives
    lag k. Correlation is Pearson over the overlapping samples at every lag
    in ``[-max_lag, max_lag]``; ties prefer the smallest ``|lag|``, then the
    negative lag. ``absolute`` ranks by ``|correlation|`` and returns the
    signed peak.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    max_lag = int(max_lag)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if min(len(a), len(b)) <= 2 * max_lag + 2:
        raise ValueError(f"sequences must be longer than {2 * max_lag + 2} samples")
    da, db = np.diff(a), np.diff(b)
    if np.ptp(da) == 0 or np.ptp(db) == 0:
        raise UndefinedCorrelationError("differenced sequence is constant")
    best = None
    for k in sorted(range(-max_lag, max_lag + 1), key=lambda v: (abs(v), v)):
        if k >= 0:
            x, y = da[:len(db) - k], db[k:]
        else:
            x, y = da[-k:], db[:len(da) + k]
        n = min(len(x), len(y))
        x, y = x[:n], y[:n]
        xs, ys = x - x.mean(), y - y.mean()
        den = np.sqrt(np.dot(xs, xs) * np.dot(ys, ys))
        if den == 0:
            continue
        c = float(np.dot(xs, ys) / den)
        score = abs(c) if absolute else c
        if best is None or score > best[0]:
            best = (score, k, c)
    if best is None:
        raise UndefinedCorrelationError("no lag has a defined correlation")
    return best[1], best[2]


def _as_signals(x) -> list:
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x[:, k] for k in range(x.shape[1])]
    return [np.asarray(s, dtype=np.float64) for s in x]


def temporal_align(joints_a, joints_b, max_lag: int, absolute: bool = False) -> TimeOffset:
    """Median of the per-joint lags between matching height sequences.

    Inputs are sequences of 1-D signals or (T, K) arrays with one column per
    joint. For an even joint count the lower median is used so the lag stays
    an integer.
    """
    A, B = _as_signals(joints_a), _as_signals(joints_b)
    if len(A) != len(B) or not A:
        raise ValueError(f"joint counts differ or are zero: {len(A)} vs {len(B)}")
    lags, peaks = [], []
    for a, b in zip(A, B):
        lag, peak = tlcc_offset(a, b, max_lag, absolute)
        lags.append(lag)
        peaks.append(peak)
    s = sorted(lags)
    lag = s[(len(s) - 1) // 2]
    meta = {"normalization": "pearson", "differenced": True, "absolute": absolute, "median": "lower"}
    return TimeOffset(lag, lags, peaks, meta)


def heights(positions, axis: int = 2) -> np.ndarray:
    """Height signals (T, K) from joint positions (T, K, 3)."""
    return np.asarray(positions, dtype=np.float64)[..., axis]
