"""Articulated object kinematics.

Parts are rigid bodies connected by revolute, prismatic or revolute-prismatic
joints arranged in a tree. Rotations are carried in the continuous 6D form
(two column seeds, decoded by Gram-Schmidt).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
REVOLUTE_PRISMATIC = "revolute_prismatic"
JOINT_KINDS = (REVOLUTE, PRISMATIC, REVOLUTE_PRISMATIC)
_DOF = {REVOLUTE: 1, PRISMATIC: 1, REVOLUTE_PRISMATIC: 2}

EPS = 1e-9


class InvalidRotationError(ValueError):
    """Raised when a rotation seed or matrix cannot be decoded."""


class ModelError(ValueError):
    """Raised when a kinematic model violates its tree invariants."""


class JointLimitError(ValueError):
    """Raised in ``reject`` mode when a joint state leaves its limits."""


# ---------------------------------------------------------------------------
# 6D rotations


def rot6d_to_matrix(r6d, eps: float = EPS) -> np.ndarray:
    """Decode 6D rotation seeds to rotation matrices.

    Args:
        r6d: array of shape (..., 6); the first three entries seed the first
            column, the last three the second column.
        eps: degeneracy threshold on the seed norms.

    Returns:
        Array of shape (..., 3, 3) with columns ``[a1, a2, a1 x a2]``.
    """
    r6d = np.asarray(r6d, dtype=np.float64)
    if r6d.shape[-1] != 6:
        raise InvalidRotationError(f"expected trailing dimension 6, got {r6d.shape}")
    c1, c2 = r6d[..., :3], r6d[..., 3:]
    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    if np.any(~np.isfinite(r6d)) or np.any(n1 <= eps):
        raise InvalidRotationError("first 6D column seed is zero or not finite")
    a1 = c1 / n1
    u = c2 - np.sum(a1 * c2, axis=-1, keepdims=True) * a1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu <= eps * np.maximum(1.0, np.linalg.norm(c2, axis=-1, keepdims=True))):
        raise InvalidRotationError("6D column seeds are parallel")
    a2 = u / nu
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3], axis=-1)


def rot6d_jacobian(r6d) -> np.ndarray:
    """Derivative of the decoded matrix with respect to the six seeds.

    Returns an array of shape (6, 3, 3): ``J[k] = dR / d r6d[k]``.
    """
    r6d = np.asarray(r6d, dtype=np.float64)
    c1, c2 = r6d[:3], r6d[3:]
    R = rot6d_to_matrix(r6d)
    a1, a2 = R[:, 0], R[:, 1]
    n1 = np.linalg.norm(c1)
    u = c2 - (a1 @ c2) * a1
    nu = np.linalg.norm(u)
    eye = np.eye(3)

    da1_dc1 = (eye - np.outer(a1, a1)) / n1
    du_dc1 = -(np.outer(a1, c2) + (a1 @ c2) * eye) @ da1_dc1
    du_dc2 = eye - np.outer(a1, a1)
    da2_du = (eye - np.outer(a2, a2)) / nu
    da2_dc1 = da2_du @ du_dc1
    da2_dc2 = da2_du @ du_dc2

    J = np.zeros((6, 3, 3))
    for k in range(3):
        d1 = da1_dc1[:, k]
        d2 = da2_dc1[:, k]
        J[k, :, 0] = d1
        J[k, :, 1] = d2
        J[k, :, 2] = np.cross(d1, a2) + np.cross(a1, d2)
        d2 = da2_dc2[:, k]
        J[k + 3, :, 1] = d2
        J[k + 3, :, 2] = np.cross(a1, d2)
    return J


def matrix_to_rot6d(R, tol: float = 1e-6) -> np.ndarray:
    """Encode rotation matrices as 6D seeds (their first two columns)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3), got {R.shape}")
    RtR = np.swapaxes(R, -1, -2) @ R
    if not np.all(np.isfinite(R)) or np.max(np.abs(RtR - np.eye(3))) > tol:
        raise InvalidRotationError("matrix is not orthonormal")
    if np.any(np.linalg.det(R) <= 0):
        raise InvalidRotationError("matrix is a reflection")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def orthonormalize_rot6d(r6d) -> np.ndarray:
    """Project 6D seeds onto their decoded (unit, orthogonal) form."""
    return matrix_to_rot6d(rot6d_to_matrix(r6d))


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=np.float64)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotvec_to_matrix(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        return np.eye(3) + skew(v)
    return axis_angle_to_matrix(v / theta, theta)


def matrix_to_rotvec(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * w
    if np.pi - theta < 1e-5:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        if w @ axis < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta * w / (2.0 * np.sin(theta))


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def homogeneous(R, t) -> np.ndarray:
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


# ---------------------------------------------------------------------------
# Model types


@dataclass(frozen=True)
class PartPose:
    """World pose of one part: 6D rotation seeds plus translation (m)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(6)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(trans)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "PartPose":
        return cls(np.array([1.0, 0, 0, 0, 1, 0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "PartPose":
        M = np.asarray(M, dtype=np.float64)
        return cls(matrix_to_rot6d(M[:3, :3]), M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        return rot6d_to_matrix(self.rotation)

    def homogeneous(self) -> np.ndarray:
        return homogeneous(self.matrix, self.translation)


@dataclass(frozen=True)
class Joint:
    """A joint connecting ``parent`` to ``child`` (part indices).

    ``origin`` is the 4x4 rigid transform from the parent frame to the joint
    frame; ``axis`` is expressed in the joint frame. ``limits`` bound the
    angle (revolute) or displacement (prismatic); for revolute-prismatic
    joints ``limits`` bounds the angle and ``shift_limits`` the displacement.
    """

    kind: str
    parent: int
    child: int
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: np.ndarray = field(default_factory=lambda: np.eye(4))
    limits: tuple[float, float] | None = None
    shift_limits: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=np.float64).reshape(3))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(4, 4))

    @property
    def dof(self) -> int:
        return _DOF[self.kind]

    def motion(self, q: np.ndarray) -> np.ndarray:
        """Homogeneous joint motion for the joint scalars ``q``."""
        M = np.eye(4)
        if self.kind == REVOLUTE:
            M[:3, :3] = axis_angle_to_matrix(self.axis, q[0])
        elif self.kind == PRISMATIC:
            M[:3, 3] = self.axis * q[0]
        else:
            M[:3, :3] = axis_angle_to_matrix(self.axis, q[0])
            M[:3, 3] = self.axis * q[1]
        return M

    def motion_derivatives(self, q: np.ndarray) -> list[np.ndarray]:
        """d(motion)/dq for each scalar of the joint."""
        if self.kind == PRISMATIC:
            D = np.zeros((4, 4))
            D[:3, 3] = self.axis
            return [D]
        R = axis_angle_to_matrix(self.axis, q[0])
        D = np.zeros((4, 4))
        D[:3, :3] = skew(self.axis) @ R
        if self.kind == REVOLUTE:
            return [D]
        Ds = np.zeros((4, 4))
        Ds[:3, 3] = self.axis
        return [D, Ds]

    def bounds(self) -> list[tuple[float, float] | None]:
        if self.kind == REVOLUTE_PRISMATIC:
            return [self.limits, self.shift_limits]
        return [self.limits]


@dataclass(frozen=True)
class Part:
    """A rigid part; ``meshes`` holds (mesh reference, 4x4 local transform)."""

    name: str
    meshes: tuple = ()


def _as_part(p) -> Part:
    if isinstance(p, Part):
        return p
    if isinstance(p, str):
        return Part(p)
    name, ref = p
    if ref is None:
        return Part(name)
    if isinstance(ref, str):
        return Part(name, ((ref, np.eye(4)),))
    return Part(name, tuple(ref))


@dataclass(frozen=True)
class KinematicModel:
    parts: tuple
    joints: tuple = ()
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(_as_part(p) for p in self.parts))
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def n_dof(self) -> int:
        return sum(j.dof for j in self.joints)

    def dof_slices(self) -> list[slice]:
        out, k = [], 0
        for j in self.joints:
            out.append(slice(k, k + j.dof))
            k += j.dof
        return out

    def part_index(self, name: str) -> int:
        for i, p in enumerate(self.parts):
            if p.name == name:
                return i
        raise KeyError(name)

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.n_dof)

    def traversal(self) -> list[int]:
        """Joint indices in parent-before-child order. Requires a valid tree."""
        report = validate_model(self)
        if report:
            raise ModelError("; ".join(v.message for v in report))
        by_parent: dict[int, list[int]] = {}
        for ji, j in enumerate(self.joints):
            by_parent.setdefault(j.parent, []).append(ji)
        order, stack = [], [self.root]
        while stack:
            p = stack.pop(0)
            for ji in by_parent.get(p, []):
                order.append(ji)
                stack.append(self.joints[ji].child)
        return order

    def ancestors(self, part: int) -> list[int]:
        """Joint indices on the chain from the root down to ``part``."""
        parent_joint = {j.child: ji for ji, j in enumerate(self.joints)}
        chain = []
        while part in parent_joint:
            ji = parent_joint[part]
            chain.append(ji)
            part = self.joints[ji].parent
        return chain[::-1]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


def validate_model(model: KinematicModel) -> list[Violation]:
    """Check the tree and joint invariants; an empty list means valid."""
    out: list[Violation] = []
    n = model.n_parts
    if n < 1:
        out.append(Violation("empty", "model has no parts"))
        return out
    if not 0 <= model.root < n:
        out.append(Violation("root", f"root index {model.root} out of range"))
        return out
    parents: dict[int, list[int]] = {}
    for ji, j in enumerate(model.joints):
        label = j.name or f"joint {ji}"
        if j.kind not in JOINT_KINDS:
            out.append(Violation("joint_kind", f"{label}: unknown kind {j.kind!r}"))
        if not (0 <= j.parent < n and 0 <= j.child < n):
            out.append(Violation("index", f"{label}: part index out of range"))
            continue
        if j.parent == j.child:
            out.append(Violation("cycle", f"{label}: joint connects part {j.child} to itself"))
        parents.setdefault(j.child, []).append(j.parent)
        if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
            out.append(Violation("axis", f"{label}: axis {j.axis.tolist()} is not unit length"))
        for lim in (j.limits, j.shift_limits):
            if lim is not None and lim[0] > lim[1]:
                out.append(Violation("limits", f"{label}: lower limit {lim[0]} > upper {lim[1]}"))
    for child, ps in parents.items():
        if len(ps) > 1:
            out.append(Violation("multiple_parents", f"part {child} has {len(ps)} parents"))
    if model.root in parents:
        out.append(Violation("root_parent", f"root part {model.root} has a parent"))
    # walk up from every part; revisiting a part means a cycle
    parent_of = {c: ps[0] for c, ps in parents.items()}
    reported_cycle = False
    for start in range(n):
        seen, p = {start}, start
        while p in parent_of:
            p = parent_of[p]
            if p in seen:
                if not reported_cycle:
                    out.append(Violation("cycle", f"joint cycle through part {p}"))
                    reported_cycle = True
                break
            seen.add(p)
        else:
            if p != model.root:
                out.append(Violation("orphan", f"part {start} is not connected to the root"))
    return out


# ---------------------------------------------------------------------------
# Forward kinematics


def apply_limits(model: KinematicModel, state, mode: str = "clamp") -> np.ndarray:
    """Clamp ``state`` into joint limits, or raise in ``reject`` mode."""
    state = np.array(state, dtype=np.float64).reshape(-1)
    if state.size != model.n_dof:
        raise ValueError(f"state has {state.size} scalars, model expects {model.n_dof}")
    for j, sl in zip(model.joints, model.dof_slices()):
        for k, lim in enumerate(j.bounds()):
            if lim is None:
                continue
            i = sl.start + k
            v = state[i]
            if lim[0] <= v <= lim[1]:
                continue
            if mode == "reject":
                raise JointLimitError(f"{j.name or 'joint'} scalar {k}: {v} outside {lim}")
            if mode != "clamp":
                raise ValueError(f"unknown limit mode {mode!r}")
            state[i] = min(max(v, lim[0]), lim[1])
    return state


def part_transforms(model: KinematicModel, root: PartPose, state, limit_mode: str = "clamp") -> np.ndarray:
    """World 4x4 transform of every part, shape (N, 4, 4)."""
    state = apply_limits(model, state, limit_mode)
    slices = model.dof_slices()
    T = np.zeros((model.n_parts, 4, 4))
    T[model.root] = root.homogeneous()
    for ji in model.traversal():
        j = model.joints[ji]
        T[j.child] = T[j.parent] @ j.origin @ j.motion(state[slices[ji]])
    return T


def forward_kinematics(model: KinematicModel, root: PartPose, state, limit_mode: str = "clamp") -> list[PartPose]:
    """Per-part world poses for a root pose and joint state."""
    return [PartPose.from_matrix(M) for M in part_transforms(model, root, state, limit_mode)]


def rest_transforms(model: KinematicModel) -> np.ndarray:
    return part_transforms(model, PartPose.identity(), model.zero_state())


def part_transform_derivatives(model: KinematicModel, root: PartPose, state) -> tuple[np.ndarray, np.ndarray]:
    """World transforms and their derivatives with respect to pose parameters.

    The parameter vector is ``[root 6D (6), root translation (3), joint
    scalars (n_dof)]``. Limits are not applied here; callers clamp first.

    Returns:
        ``(T, dT)`` with shapes (N, 4, 4) and (N, 9 + n_dof, 4, 4).
    """
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    slices = model.dof_slices()
    n_par = 9 + model.n_dof
    N = model.n_parts

    T = np.zeros((N, 4, 4))
    dT = np.zeros((N, n_par, 4, 4))
    R = root.matrix
    T[model.root] = homogeneous(R, root.translation)
    dR = rot6d_jacobian(root.rotation)
    dT[model.root, :6, :3, :3] = dR
    for k in range(3):
        dT[model.root, 6 + k, k, 3] = 1.0

    for ji in model.traversal():
        j = model.joints[ji]
        q = state[slices[ji]]
        local = j.origin @ j.motion(q)
        T[j.child] = T[j.parent] @ local
        dT[j.child] = dT[j.parent] @ local
        for k, D in enumerate(j.motion_derivatives(q)):
            dT[j.child, 9 + slices[ji].start + k] = T[j.parent] @ j.origin @ D
    return T, dT
