"""Gradient-descent engines: object pose fitting against a target occupancy
grid with an interaction prior, and penetration removal for bodies."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .body import BodyModel, BodyParams, aggregate_to_joints, pose_body, posed_joints_and_jacobian
from .geometry import PointSet, penetration_depth, M_TO_MM
from .kinematics import (InvalidRotationError, KinematicModel, PartPose, apply_limits,
                         orthonormalize_rot6d, rest_transforms)
from .voxel import MultiResVoxel, VoxelGrid, resample_transformed

log = logging.getLogger(__name__)

VARIANTS = ("gd", "momentum", "adam")
# joint residuals of penetration removal are measured in centimetres
M_TO_CM = 100.0


@dataclass
class FitConfig:
    step_size: float = 1e-2
    max_iters: int = 500
    tol: float = 1e-6
    lambda_z: float = 0.1
    lambda_r: float = 1.0
    variant: str = "adam"
    seed: int = 0
    reorthonormalize_every: int = 25
    patience: int = 20
    lr_decay: float = 0.5
    min_step_ratio: float = 1e-3
    limit_mode: str = "clamp"
    restarts: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lambda_z < 0 or self.lambda_r < 0:
            raise ValueError("objective weights must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class FitResult:
    root: PartPose
    state: np.ndarray
    objective: float
    trace: list
    converged: bool
    iterations: int
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "root": {"rotation6d": self.root.rotation.tolist(), "translation": self.root.translation.tolist()},
            "joint_state": np.asarray(self.state).tolist(),
            "objective": self.objective,
            "trace": [float(v) for v in self.trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "config": self.config,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


# ---------------------------------------------------------------------------
# Generic descent


@dataclass
class Descent:
    x: np.ndarray
    f: float
    trace: list
    converged: bool
    iterations: int


def descend(fun, x0, cfg: FitConfig, project=None, reorthonormalize=None) -> Descent:
    """Minimize ``fun(x) -> (f, grad)`` from ``x0``, returning the best iterate.

    ``project`` is applied after every step (e.g. joint clamping);
    ``reorthonormalize`` every ``cfg.reorthonormalize_every`` steps. The step
    size halves when the best objective has not improved for
    ``cfg.patience`` iterations. Convergence means the relative objective
    change fell below ``cfg.tol``, an exact zero objective, or the step size
    decayed below ``min_step_ratio`` of its start. A non-finite objective
    (degenerate rotation) rejects the step and halves the step size.
    """
    x = np.array(x0, dtype=np.float64)
    lr = cfg.step_size
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best_x, best_f = x.copy(), np.inf
    trace: list = []
    since_best = 0
    converged = False
    f_prev = None
    it = 0
    for it in range(cfg.max_iters):
        f, g = fun(x)
        if not np.isfinite(f):
            # degenerate rotation: step back to the best iterate with a smaller step
            if not np.isfinite(best_f):
                raise InvalidRotationError("objective is undefined at the initial pose")
            lr *= cfg.lr_decay
            x = best_x.copy()
            m[:] = 0.0
            v[:] = 0.0
            since_best = 0
            if lr < cfg.step_size * cfg.min_step_ratio:
                break
            continue
        trace.append(float(f))
        if f < best_f:
            best_f, best_x = f, x.copy()
            since_best = 0
        else:
            since_best += 1
        if f == 0.0 or not np.any(g):
            converged = True
            break
        if f_prev is not None and abs(f_prev - f) <= cfg.tol * max(abs(f_prev), 1e-12) and since_best == 0:
            converged = True
            break
        f_prev = f
        if since_best >= cfg.patience:
            lr *= cfg.lr_decay
            since_best = 0
            x = best_x.copy()
            m[:] = 0.0
            v[:] = 0.0
            if lr < cfg.step_size * cfg.min_step_ratio:
                converged = True
                break
            continue
        if cfg.variant == "gd":
            x = x - lr * g
        elif cfg.variant == "momentum":
            m = 0.9 * m + g
            x = x - lr * m
        else:
            t = it + 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            x = x - lr * mhat / (np.sqrt(vhat) + eps)
        if project is not None:
            x = project(x)
        if reorthonormalize is not None and cfg.reorthonormalize_every and (it + 1) % cfg.reorthonormalize_every == 0:
            x = reorthonormalize(x)
    return Descent(best_x, float(best_f), trace, converged, it + 1)


# ---------------------------------------------------------------------------
# Object pose fitting


class PoseObjective:
    """``lambda_r * ||V(pose) - target||_2 + lambda_z * ||Enc(human, V(pose))||``."""

    def __init__(self, target: VoxelGrid, model: KinematicModel, part_grids, human: MultiResVoxel | None,
                 prior=None, lambda_r: float = 1.0, lambda_z: float = 0.1, limit_mode: str = "clamp",
                 fd_step: float = 1e-5):
        self.target = target
        self.model = model
        self.part_grids = list(part_grids)
        self.human = human
        self.prior = prior if lambda_z > 0 else None
        self.lambda_r = lambda_r
        self.lambda_z = lambda_z
        self.limit_mode = limit_mode
        self.fd_step = fd_step
        self.rest = rest_transforms(model)
        if self.prior is not None and human is None:
            raise ValueError("the interaction prior needs the human voxels")

    def split(self, x) -> tuple[PartPose, np.ndarray]:
        return PartPose(x[:6], x[6:9]), x[9:]

    def render(self, x, want_grad=True):
        root, state = self.split(x)
        return resample_transformed(self.model, self.part_grids, root, state, want_grad=want_grad,
                                    limit_mode=self.limit_mode, rest=self.rest)

    def prior_norm(self, grid: VoxelGrid) -> float:
        return float(np.linalg.norm(self.prior.encode(self.human, grid)))

    def __call__(self, x):
        try:
            res = self.render(x)
        except InvalidRotationError:
            return np.inf, np.zeros_like(x)
        V = res.grid.occupancy
        n_par = res.grad.shape[0]
        G = res.grad.reshape(n_par, -1)
        f = 0.0
        g = np.zeros(n_par)
        if self.lambda_r > 0:
            d = (V - self.target.occupancy).ravel()
            nd = float(np.linalg.norm(d))
            f += self.lambda_r * nd
            if nd > 0:
                g += self.lambda_r * (G @ d) / nd
        if self.prior is not None:
            if hasattr(self.prior, "norm_and_grad"):
                nz, gocc = self.prior.norm_and_grad(self.human, res.grid)
                f += self.lambda_z * nz
                g += self.lambda_z * (G @ gocc.ravel())
            else:
                nz = self.prior_norm(res.grid)
                f += self.lambda_z * nz
                g += self.lambda_z * self._fd_prior_grad(x)
        return f, g

    def _fd_prior_grad(self, x):
        out = np.zeros_like(x)
        for k in range(len(x)):
            e = np.zeros_like(x)
            e[k] = self.fd_step
            fp = self.prior_norm(self.render(x + e, want_grad=False).grid)
            fm = self.prior_norm(self.render(x - e, want_grad=False).grid)
            out[k] = (fp - fm) / (2 * self.fd_step)
        return out


def fit_object_pose(target: VoxelGrid, model: KinematicModel, part_grids, init_root: PartPose,
                    human: MultiResVoxel | None = None, prior=None, cfg: FitConfig | None = None,
                    init_state=None) -> FitResult:
    """Fit root pose and joint state so the posed part grids match ``target``.

    Joint scalars start at zero unless ``init_state`` is given. With
    ``cfg.restarts > 0`` further fits start from uniformly random joint states
    inside the limits (or +-0.5 without limits) and the best is kept.
    """
    cfg = cfg or FitConfig()
    t0 = time.perf_counter()
    objective = PoseObjective(target, model, part_grids, human, prior, cfg.lambda_r, cfg.lambda_z,
                              cfg.limit_mode)

    def project(x):
        x = x.copy()
        x[9:] = apply_limits(model, x[9:], "clamp")
        return x

    def reorth(x):
        x = x.copy()
        try:
            x[:6] = orthonormalize_rot6d(x[:6])
        except InvalidRotationError:
            log.warning("degenerate rotation during descent; keeping previous seeds")
        return x

    state0 = np.zeros(model.n_dof) if init_state is None else np.asarray(init_state, dtype=np.float64)
    starts = [state0]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        s = np.empty(model.n_dof)
        for j, sl in zip(model.joints, model.dof_slices()):
            for k, lim in enumerate(j.bounds()):
                lo, hi = lim if lim is not None else (-0.5, 0.5)
                s[sl.start + k] = rng.uniform(lo, hi)
        starts.append(s)

    best = None
    for s in starts:
        x0 = np.concatenate([init_root.rotation, init_root.translation, s])
        run = descend(objective, x0, cfg, project=project, reorthonormalize=reorth)
        if best is None or run.f < best.f:
            best = run
    root, state = objective.split(best.x)
    return FitResult(root, state.copy(), best.f, best.trace, best.converged, best.iterations,
                     time.perf_counter() - t0, asdict(cfg))


# ---------------------------------------------------------------------------
# Penetration removal


@dataclass
class PenetrationConfig:
    lambda_reg: float = 0.1
    step_size: float = 5e-3
    max_iters: int = 500
    tol: float = 1e-4
    rounds: int = 5
    optimize_translation: bool = True
    patience: int = 10


@dataclass
class PenetrationResult:
    params: BodyParams
    depth_before_mm: float
    depth_after_mm: float
    rounds: int
    converged: bool
    offsets_mm: list


def vertex_penetration(body_mesh, object_surface) -> tuple[np.ndarray, np.ndarray]:
    """Per body vertex penetration depth (mm) and correction direction.

    Every object point inside the body is assigned to its nearest body
    vertex; a vertex keeps the deepest assigned point. The correction
    direction points from the body surface toward the penetrating point,
    the way the body has to move to release it.
    """
    from scipy.spatial import cKDTree

    pen = penetration_depth(body_mesh, object_surface)
    V = body_mesh.vertices
    depths = np.zeros(len(V))
    dirs = np.zeros((len(V), 3))
    idx = np.nonzero(pen.inside & (pen.depths_mm > 0))[0]
    if not len(idx):
        return depths, dirs
    pts = object_surface.points if isinstance(object_surface, PointSet) else np.asarray(object_surface)
    nearest = cKDTree(V).query(pts[idx], k=1)[1]
    # deepest first so that the first write per vertex wins; stable for ties
    order = np.argsort(-pen.depths_mm[idx], kind="stable")
    for o in order:
        v = nearest[o]
        if depths[v] == 0.0:
            depths[v] = pen.depths_mm[idx[o]]
            dirs[v] = -pen.directions[idx[o]]
    return depths, dirs


def remove_penetration(body: BodyModel, params: BodyParams, object_surface: PointSet,
                       cfg: PenetrationConfig | None = None) -> PenetrationResult:
    """Push the body out of the object while staying close to the input pose.

    Each round measures per-vertex penetration, aggregates it onto the
    skeleton through the skinning weights, and fits the pose parameters to
    the offset skeleton by minimizing the mean squared joint error (cm^2)
    plus ``lambda_reg`` times the squared distance to the input parameters.
    """
    cfg = cfg or PenetrationConfig()
    x_in = _pack(params, cfg.optimize_translation)
    posed = pose_body(body, params)
    before = penetration_depth(posed.mesh(), object_surface).depth_mm
    current = params
    converged = True
    offsets_log = []
    rounds = 0
    for rounds in range(1, cfg.rounds + 1):
        posed = pose_body(body, current)
        depths, dirs = vertex_penetration(posed.mesh(), object_surface)
        if not np.any(depths > 0):
            rounds -= 1
            break
        offsets = aggregate_to_joints(body, depths, dirs)
        offsets_log.append(offsets.tolist())
        target = posed.joints + offsets / M_TO_MM
        J = body.n_joints

        def fun(x):
            p = _unpack(params, x, cfg.optimize_translation)
            try:
                joints, jac = posed_joints_and_jacobian(body, p)
            except InvalidRotationError:
                return np.inf, np.zeros_like(x)
            r = (joints - target) * M_TO_CM
            f = float(np.sum(r * r)) / J + cfg.lambda_reg * float(np.sum((x - x_in) ** 2))
            gj = 2.0 * np.einsum("ja,jak->k", r, jac) * M_TO_CM / J
            if not cfg.optimize_translation:
                gj = gj[:-3]
            g = gj + 2.0 * cfg.lambda_reg * (x - x_in)
            return f, g

        fcfg = FitConfig(step_size=cfg.step_size, max_iters=cfg.max_iters, tol=cfg.tol, patience=cfg.patience,
                         reorthonormalize_every=0)
        run = descend(fun, _pack(current, cfg.optimize_translation), fcfg)
        converged &= run.converged
        current = _unpack(params, run.x, cfg.optimize_translation)
    after = penetration_depth(pose_body(body, current).mesh(), object_surface).depth_mm
    drift = float(np.linalg.norm(_pack(current, cfg.optimize_translation) - x_in))
    # the best iterate never exceeds the objective at the input, so each round
    # moves at most sqrt(mean squared offset / lambda_reg)
    bound = sum(np.sqrt(np.sum((np.asarray(o) / M_TO_MM * M_TO_CM) ** 2) / body.n_joints / cfg.lambda_reg)
                for o in offsets_log) if cfg.lambda_reg > 0 else np.inf
    if drift > bound + 1e-12:
        log.warning("parameter drift %.4g exceeds offset bound %.4g", drift, bound)
    log.debug("penetration %.2f -> %.2f mm, parameter drift %.4f", before, after, drift)
    return PenetrationResult(current, before, after, rounds, converged, offsets_log)


def _pack(params: BodyParams, with_transl: bool) -> np.ndarray:
    r6 = params.rotations6d().ravel()
    return np.concatenate([r6, params.transl]) if with_transl else r6.copy()


def _unpack(template: BodyParams, x, with_transl: bool) -> BodyParams:
    J6 = len(template.rotations6d()) * 6
    p = template.with_rotations6d(x[:J6])
    if with_transl:
        p = replace(p, transl=x[J6:J6 + 3])
    return p


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(objective, params, step: float = 1e-6, zero_tol: float = 1e-8) -> float:
    """Largest discrepancy between analytic and central-difference gradients.

    ``objective(x)`` returns ``(value, gradient)``. Each scalar is compared
    relatively; scalars whose analytic and numeric derivatives are both below
    ``zero_tol`` are compared absolutely.
    """
    x = np.asarray(params, dtype=np.float64)
    _, g = objective(x)
    g = np.asarray(g, dtype=np.float64)
    worst = 0.0
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        num = (objective(x + e)[0] - objective(x - e)[0]) / (2 * step)
        denom = max(abs(g[k]), abs(num))
        err = abs(g[k] - num) if denom < zero_tol else abs(g[k] - num) / denom
        worst = max(worst, err)
    return worst
