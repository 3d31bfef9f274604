"""Interaction prior: encoder interface, the four training losses, negative
sampling, and an analytic encoder usable without trained weights."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .kinematics import KinematicModel, PartPose, rotvec_to_matrix, matrix_to_rot6d
from .voxel import MultiResVoxel, ShapeError, VoxelGrid, voxel_l1

LATENT_DIM = 8
FEATURE_NAMES = ("overlap", "proximity", "contact_fraction", "offset_x", "offset_y", "offset_z",
                 "volume", "spread")
# used when a reference is fitted from fewer than two configurations
DEFAULT_SCALES = np.array([2e-4, 0.02, 0.25, 0.05, 0.05, 0.05, 5e-3, 0.05])
DEFAULT_NOISE = (15.0, 100.0, 0.3)


@dataclass(frozen=True)
class LatentGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64).reshape(-1))
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must have the same length")


@runtime_checkable
class PriorEncoder(Protocol):
    """Maps a (human, object) voxel pair to a latent vector.

    Encoders may also provide ``norm_and_grad(human, object)`` returning the
    latent norm and its gradient with respect to the object occupancy; the
    optimizer falls back to finite differences over pose otherwise.
    """

    def encode(self, human: MultiResVoxel, obj: VoxelGrid) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Training losses


def loss_kl(q: LatentGaussian) -> float:
    """KL divergence of N(mu, sigma^2) from the standard normal."""
    if np.any(q.sigma <= 0):
        raise ValueError("sigma must be positive")
    s2 = q.sigma ** 2
    return float(0.5 * np.sum(q.mu ** 2 + s2 - 1.0 - np.log(s2)))


def loss_pene(human: VoxelGrid, obj: VoxelGrid) -> float:
    """Mean over cells of the product of human and object occupancy."""
    if not human.spec.same_as(obj.spec):
        raise ShapeError("grids have different specs")
    return float(np.mean(human.occupancy * obj.occupancy))


def loss_contrastive(pos_norm: float, neg_norm: float) -> float:
    """Hinge pushing perturbed pairs' latents further out than the originals."""
    if pos_norm < 0 or neg_norm < 0:
        raise ValueError("norms must be non-negative")
    return max(0.0, pos_norm - neg_norm)


def loss_recon(pred: VoxelGrid, target: VoxelGrid, kind: str = "l1", eps: float = 1e-7) -> float:
    if kind == "l1":
        return voxel_l1(pred, target)
    if kind == "bce":
        if not pred.spec.same_as(target.spec):
            raise ShapeError("grids have different specs")
        p = np.clip(pred.occupancy, eps, 1.0 - eps)
        t = target.occupancy
        return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))
    raise ValueError(f"unknown reconstruction loss {kind!r}")


@dataclass(frozen=True)
class PriorLoss:
    recon: float
    kl: float
    pene: float
    contra: float
    weights: tuple = (1.0, 1.0, 1.0, 1.0)

    @property
    def total(self) -> float:
        w = self.weights
        return w[0] * self.recon + w[1] * self.kl + w[2] * self.pene + w[3] * self.contra


def prior_loss(pred: VoxelGrid, target: VoxelGrid, q: LatentGaussian, human: VoxelGrid,
               pos_norm: float, neg_norm: float, weights=(1.0, 1.0, 1.0, 1.0),
               recon: str = "l1") -> PriorLoss:
    """All four training terms; the penetration term uses the predicted object."""
    return PriorLoss(loss_recon(pred, target, recon), loss_kl(q), loss_pene(human, pred),
                     loss_contrastive(pos_norm, neg_norm), tuple(weights))


# ---------------------------------------------------------------------------
# Negative samples


def perturb_object(model: KinematicModel, root: PartPose, state, noise=DEFAULT_NOISE, seed=None):
    """Random root and joint perturbation for contrastive negatives.

    ``noise`` is (rotation degrees, translation mm, joint scalar). The root
    rotates about a uniformly random axis by an angle uniform in
    ``[0, rot]``, translates along a uniformly random direction by a length
    uniform in ``[0, transl]``, and every joint scalar moves by a value
    uniform in ``[-joint, joint]``.
    """
    rot_deg, transl_mm, joint = noise
    if min(noise) < 0:
        raise ValueError("noise bounds must be non-negative")
    rng = np.random.default_rng(seed)
    state = np.asarray(state, dtype=np.float64).reshape(-1)

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rot_deg) * rng.random()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = transl_mm / 1000.0 * rng.random()
    dq = rng.uniform(-joint, joint, size=model.n_dof) if joint > 0 else np.zeros(model.n_dof)

    if angle == 0 and shift == 0 and not np.any(dq):
        return root, state.copy()
    R = rotvec_to_matrix(axis * angle) @ root.matrix
    new_root = PartPose(matrix_to_rot6d(R), root.translation + shift * direction)
    return new_root, state + dq


# ---------------------------------------------------------------------------
# Analytic encoder


@dataclass
class ReferenceStats:
    """Feature standardization fitted on positive (plausible) configurations."""

    mean: np.ndarray
    scale: np.ndarray
    contact_target: float = 0.0
    contact_band: float = 0.05
    tau: float = 0.02
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "features": list(FEATURE_NAMES),
            "mean": np.asarray(self.mean).tolist(),
            "scale": np.asarray(self.scale).tolist(),
            "contact_target": self.contact_target,
            "contact_band": self.contact_band,
            "tau": self.tau,
            "metadata": self.metadata,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ReferenceStats":
        d = json.loads(text)
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64),
                   float(d["contact_target"]), float(d["contact_band"]), float(d["tau"]),
                   d.get("metadata", {}))

    @classmethod
    def neutral(cls) -> "ReferenceStats":
        return cls(np.zeros(LATENT_DIM), DEFAULT_SCALES.copy())


class _HumanField:
    """Distance field and centroid of the human grid at one resolution."""

    def __init__(self, human: VoxelGrid):
        occ = human.binary()
        self.occupancy = human.occupancy
        cell = human.spec.cell_size
        if occ.any():
            self.distance = ndimage.distance_transform_edt(~occ, sampling=cell)
        else:
            self.distance = np.full(occ.shape, np.inf)
        C = human.spec.centers()
        w = human.occupancy
        self.centroid = (np.tensordot(w, C, axes=3) / w.sum()) if w.sum() > 0 else np.zeros(3)
        self.centers = C.reshape(-1, 3)


def interaction_features(human: MultiResVoxel, obj: VoxelGrid, stats: ReferenceStats,
                         want_grad: bool = False, _cache=None):
    """Raw interaction features and optionally d(features)/d(occupancy)."""
    level = human.at(obj.spec.resolution)
    if not level.spec.same_as(obj.spec):
        raise ShapeError("human and object grids must share bounds")
    hf = _cache if _cache is not None else _HumanField(level)
    o = obj.occupancy.reshape(-1)
    m = o.sum()
    if m <= 0:
        from .geometry import EmptyInputError
        raise EmptyInputError("object grid is empty")
    h = hf.occupancy.reshape(-1)
    D = hf.distance.reshape(-1)
    X = hf.centers
    N = o.size
    tau, band = stats.tau, stats.contact_band

    overlap = float(h @ o) / N
    active = o > 0
    dmin = D[active].min()
    if not np.isfinite(dmin):
        raise ShapeError("human grid is empty")
    s = np.exp(-(D - dmin) / tau)
    S = float(s @ o)
    prox = dmin - tau * np.log(S / m)
    near = (D <= band).astype(np.float64)
    frac = float(near @ o) / m
    cen = (X.T @ o) / m
    offset = cen - hf.centroid
    cell_vol = float(np.prod(obj.spec.cell_size))
    volume = m * cell_vol
    r2 = np.sum((X - cen) ** 2, axis=1)
    spread2 = float(r2 @ o) / m
    spread = np.sqrt(spread2)
    f = np.array([overlap, prox - stats.contact_target, frac, *offset, volume, spread])
    if not want_grad:
        return f, None
    G = np.empty((LATENT_DIM, N))
    G[0] = h / N
    G[1] = -tau * (s / S - 1.0 / m)
    G[2] = (near - frac) / m
    G[3:6] = ((X - cen) / m).T
    G[6] = cell_vol
    G[7] = (r2 - spread2) / (2.0 * m * spread) if spread > 0 else 0.0
    return f, G


class AnalyticEncoder:
    """Standardized interaction features as an 8-dimensional latent.

    The norm is zero for configurations matching the reference statistics,
    grows with human-object overlap, with separation beyond the contact
    target, and with centroid displacement from the reference.
    """

    def __init__(self, stats: ReferenceStats | None = None):
        self.stats = stats or ReferenceStats.neutral()
        self._cached = None

    def _field(self, human: MultiResVoxel, obj: VoxelGrid):
        level = human.at(obj.spec.resolution)
        if self._cached is None or self._cached[0] is not level:
            self._cached = (level, _HumanField(level))
        return self._cached[1]

    def encode(self, human: MultiResVoxel, obj: VoxelGrid) -> np.ndarray:
        f, _ = interaction_features(human, obj, self.stats, _cache=self._field(human, obj))
        return (f - self.stats.mean) / self.stats.scale

    def norm_and_grad(self, human: MultiResVoxel, obj: VoxelGrid):
        f, G = interaction_features(human, obj, self.stats, want_grad=True, _cache=self._field(human, obj))
        z = (f - self.stats.mean) / self.stats.scale
        n = float(np.linalg.norm(z))
        if n == 0.0:
            return 0.0, np.zeros(obj.occupancy.shape)
        g = (z / self.stats.scale / n) @ G
        return n, g.reshape(obj.occupancy.shape)


def encode_analytic(human: MultiResVoxel, obj: VoxelGrid, reference_stats: ReferenceStats) -> np.ndarray:
    return AnalyticEncoder(reference_stats).encode(human, obj)


def fit_reference_stats(pairs, contact_band: float = 0.05, tau: float = 0.02,
                        min_scale=None, metadata=None) -> ReferenceStats:
    """Fit feature means and scales on plausible (human, object) pairs.

    The contact target is the mean proximity of the pairs, so those
    configurations encode near zero. Scales are the per-feature standard
    deviation floored at ``min_scale`` (defaults used for single pairs).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one positive pair")
    base = ReferenceStats(np.zeros(LATENT_DIM), np.ones(LATENT_DIM), 0.0, contact_band, tau)
    F = np.array([interaction_features(h, o, base)[0] for h, o in pairs])
    floor = DEFAULT_SCALES if min_scale is None else np.broadcast_to(np.asarray(min_scale, dtype=np.float64), (LATENT_DIM,))
    scale = np.maximum(F.std(axis=0), floor) if len(F) > 1 else floor.copy()
    contact_target = float(F[:, 1].mean())
    mean = F.mean(axis=0)
    mean[1] = 0.0
    meta = {"n_pairs": len(pairs), "latent_dim": LATENT_DIM}
    meta.update(metadata or {})
    return ReferenceStats(mean, scale, contact_target, contact_band, tau, meta)
