"""Linear-blend-skinning parametric body.

The layout follows SMPL-X's parameter split: a root joint, ``n_body`` body
joints and ``n_hand`` hand joints, each carrying a 6D rotation, plus shape
coefficients and a root translation. Real SMPL-X assets can be loaded into
:class:`BodyModel` through :mod:`artifit.io`; :func:`make_test_body` builds a
small synthetic body for tests and demos.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import TriMesh, concatenate_meshes, cylinder_mesh
from .kinematics import rot6d_jacobian, rot6d_to_matrix

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class BodyModel:
    template: np.ndarray          # (P, 3)
    faces: np.ndarray             # (F, 3)
    joints_rest: np.ndarray       # (J, 3)
    parents: np.ndarray           # (J,), -1 for the root
    weights: np.ndarray           # (P, J)
    shape_dirs: np.ndarray        # (P, 3, S)
    n_body: int = 21
    n_hand: int = 0
    joint_regressor: np.ndarray | None = None  # (J, P); rest joints are used when absent
    joint_names: tuple = ()

    def __post_init__(self):
        for name in ("template", "joints_rest", "weights", "shape_dirs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "parents", np.asarray(self.parents, dtype=np.int64))
        P, J = self.weights.shape
        if self.template.shape != (P, 3):
            raise ParameterError("template and weights disagree on vertex count")
        if self.joints_rest.shape != (J, 3) or self.parents.shape != (J,):
            raise ParameterError("skeleton arrays disagree on joint count")
        if J != 1 + self.n_body + self.n_hand:
            raise ParameterError(f"{J} joints but 1 + {self.n_body} + {self.n_hand} expected")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (P, 3):
            raise ParameterError("shape basis must have shape (P, 3, S)")
        if np.any(self.weights < 0) or np.max(np.abs(self.weights.sum(1) - 1.0)) > 1e-6:
            raise ParameterError("skinning weight rows must be non-negative and sum to 1")
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, J)) or np.any(self.parents[1:] < 0):
            raise ParameterError("parents must list each joint after its parent, root first")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_vertices(self) -> int:
        return len(self.template)

    @property
    def n_shape(self) -> int:
        return self.shape_dirs.shape[2]

    def zero_params(self) -> "BodyParams":
        return BodyParams(
            betas=np.zeros(self.n_shape),
            body_pose=np.tile(IDENTITY_6D, (self.n_body, 1)),
            hand_pose=np.tile(IDENTITY_6D, (self.n_hand, 1)),
            root_orient=IDENTITY_6D.copy(),
            transl=np.zeros(3),
        )


@dataclass(frozen=True)
class BodyParams:
    betas: np.ndarray
    body_pose: np.ndarray
    hand_pose: np.ndarray
    root_orient: np.ndarray
    transl: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "body_pose", np.asarray(self.body_pose, dtype=np.float64).reshape(-1, 6))
        object.__setattr__(self, "hand_pose", np.asarray(self.hand_pose, dtype=np.float64).reshape(-1, 6))
        object.__setattr__(self, "root_orient", np.asarray(self.root_orient, dtype=np.float64).reshape(6))
        object.__setattr__(self, "transl", np.asarray(self.transl, dtype=np.float64).reshape(3))

    def rotations6d(self) -> np.ndarray:
        """All joint rotations in skeleton order, shape (J, 6)."""
        return np.concatenate([self.root_orient[None], self.body_pose, self.hand_pose])

    def with_rotations6d(self, rot6d) -> "BodyParams":
        rot6d = np.asarray(rot6d, dtype=np.float64).reshape(-1, 6)
        nb = len(self.body_pose)
        return replace(self, root_orient=rot6d[0], body_pose=rot6d[1:1 + nb], hand_pose=rot6d[1 + nb:])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("betas", "body_pose", "hand_pose", "root_orient", "transl")}

    @classmethod
    def from_dict(cls, d: dict) -> "BodyParams":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in
                      ("betas", "body_pose", "hand_pose", "root_orient", "transl")})


@dataclass(frozen=True)
class PosedBody:
    vertices: np.ndarray
    joints: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def mesh(self) -> TriMesh:
        return TriMesh(self.vertices, self.faces)


def _check_params(model: BodyModel, params: BodyParams):
    if params.betas.shape != (model.n_shape,):
        raise ParameterError(f"expected {model.n_shape} shape coefficients, got {params.betas.shape[0]}")
    if params.body_pose.shape != (model.n_body, 6):
        raise ParameterError(f"expected {model.n_body} body rotations, got {len(params.body_pose)}")
    if params.hand_pose.shape != (model.n_hand, 6):
        raise ParameterError(f"expected {model.n_hand} hand rotations, got {len(params.hand_pose)}")


def shaped_rest(model: BodyModel, betas) -> tuple[np.ndarray, np.ndarray]:
    """Rest vertices and joints after applying the shape blend."""
    verts = model.template + model.shape_dirs @ np.asarray(betas, dtype=np.float64)
    if model.joint_regressor is not None:
        joints = model.joint_regressor @ verts
    else:
        joints = model.joints_rest
    return verts, joints


def joint_transforms(model: BodyModel, rotations: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Global 4x4 transforms G_j of every joint (before root translation)."""
    J = model.n_joints
    G = np.zeros((J, 4, 4))
    for j in range(J):
        L = np.eye(4)
        L[:3, :3] = rotations[j]
        p = model.parents[j]
        L[:3, 3] = joints[j] if p < 0 else joints[j] - joints[p]
        G[j] = L if p < 0 else G[p] @ L
    return G


def pose_body(model: BodyModel, params: BodyParams) -> PosedBody:
    """Shape blend, then skin the vertices with the posed joint transforms."""
    _check_params(model, params)
    verts, joints = shaped_rest(model, params.betas)
    rotations = rot6d_to_matrix(params.rotations6d())
    G = joint_transforms(model, rotations, joints)
    # A_j removes the rest position of joint j before applying G_j
    A = G.copy()
    A[:, :3, 3] -= np.einsum("jab,jb->ja", G[:, :3, :3], joints)
    blended = np.einsum("pj,jab->pab", model.weights, A)
    posed = np.einsum("pab,pb->pa", blended[:, :3, :3], verts) + blended[:, :3, 3]
    return PosedBody(posed + params.transl, G[:, :3, 3] + params.transl, model.faces)


def posed_joints_and_jacobian(model: BodyModel, params: BodyParams) -> tuple[np.ndarray, np.ndarray]:
    """Posed joint positions and their derivative w.r.t. rotations and translation.

    Returns ``(joints (J, 3), jac (J, 3, 6 J + 3))`` where the parameter order
    is the flattened (J, 6) rotation seeds followed by the root translation.
    """
    _check_params(model, params)
    _, rest = shaped_rest(model, params.betas)
    r6 = params.rotations6d()
    rotations = rot6d_to_matrix(r6)
    G = joint_transforms(model, rotations, rest)
    J = model.n_joints
    pos = G[:, :3, 3]
    jac = np.zeros((J, 3, 6 * J + 3))
    jac[:, :, 6 * J:] = np.eye(3)
    descendants = _descendants(model.parents)
    for j in range(J):
        p = model.parents[j]
        Rpar = np.eye(3) if p < 0 else G[p, :3, :3]
        dR = rot6d_jacobian(r6[j])
        kids = descendants[j]
        if not kids:
            continue
        # joint k in frame j: y = G_j^-1 p_k
        y = (pos[kids] - G[j, :3, 3]) @ G[j, :3, :3]
        for m in range(6):
            jac[kids, :, 6 * j + m] = (Rpar @ dR[m] @ y.T).T
    return pos + params.transl, jac


def _descendants(parents) -> list[list[int]]:
    J = len(parents)
    out: list[list[int]] = [[] for _ in range(J)]
    for k in range(J):
        p = parents[k]
        while p >= 0:
            out[p].append(k)
            p = parents[p]
    return out


def aggregate_to_joints(model: BodyModel, depths, directions) -> np.ndarray:
    """Per-joint penetration offsets from per-vertex depths and directions.

    For each joint j the vertex maximizing ``W[v, j] * depth[v]`` is chosen
    (lowest index on ties) and the offset is ``W[v*, j] * depth[v*] *
    direction[v*]``; joints with no weighted depth get a zero offset. The
    offsets carry the unit of ``depths``.
    """
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if np.any(depths < 0):
        raise ValueError("penetration depths must be non-negative")
    weighted = model.weights * depths[:, None]          # (P, J)
    vstar = np.argmax(weighted, axis=0)
    mag = weighted[vstar, np.arange(model.n_joints)]
    out = mag[:, None] * directions[vstar]
    out[mag <= 0] = 0.0
    return out


# ---------------------------------------------------------------------------
# Synthetic body

_SKELETON = (
    # name, parent, rest position (y up, x to the body's left), bone radius
    ("pelvis", -1, (0.0, 0.0, 0.0), 0.11),
    ("left_hip", 0, (0.1, -0.08, 0.0), 0.07),
    ("right_hip", 0, (-0.1, -0.08, 0.0), 0.07),
    ("spine1", 0, (0.0, 0.1, 0.0), 0.12),
    ("left_knee", 1, (0.1, -0.48, 0.0), 0.05),
    ("right_knee", 2, (-0.1, -0.48, 0.0), 0.05),
    ("spine2", 3, (0.0, 0.22, 0.0), 0.12),
    ("left_ankle", 4, (0.1, -0.88, 0.0), 0.04),
    ("right_ankle", 5, (-0.1, -0.88, 0.0), 0.04),
    ("spine3", 6, (0.0, 0.32, 0.0), 0.12),
    ("left_foot", 7, (0.1, -0.93, 0.12), 0.035),
    ("right_foot", 8, (-0.1, -0.93, 0.12), 0.035),
    ("neck", 9, (0.0, 0.5, 0.0), 0.05),
    ("left_collar", 9, (0.07, 0.44, 0.0), 0.05),
    ("right_collar", 9, (-0.07, 0.44, 0.0), 0.05),
    ("head", 12, (0.0, 0.6, 0.0), 0.09),
    ("left_shoulder", 13, (0.18, 0.45, 0.0), 0.045),
    ("right_shoulder", 14, (-0.18, 0.45, 0.0), 0.045),
    ("left_elbow", 16, (0.45, 0.45, 0.0), 0.04),
    ("right_elbow", 17, (-0.45, 0.45, 0.0), 0.04),
    ("left_wrist", 18, (0.7, 0.45, 0.0), 0.035),
    ("right_wrist", 19, (-0.7, 0.45, 0.0), 0.035),
)

# leaf segments: joint -> end point of a capsule carried only by that joint
_LEAVES = {
    "head": ((0.0, 0.8, 0.0), 0.09),
    "left_foot": ((0.1, -0.93, 0.2), 0.035),
    "right_foot": ((-0.1, -0.93, 0.2), 0.035),
    "left_wrist": ((0.85, 0.45, 0.0), 0.03),
    "right_wrist": ((-0.85, 0.45, 0.0), 0.03),
}


def _hand_joints(side: str, wrist: int, wrist_pos, sign: float):
    """Five three-joint fingers per hand (15 joints)."""
    out = []
    for f in range(5):
        z = (f - 2) * 0.012
        base = len(out)
        for s in range(3):
            parent = wrist if s == 0 else ("rel", base + s - 1)
            pos = (wrist_pos[0] + sign * (0.08 + 0.025 * s), wrist_pos[1], z)
            out.append((f"{side}_finger{f}_{s}", parent, pos, 0.008))
    return out


def make_test_body(segments: int = 6, rings: int = 2, n_shape: int = 10, with_hands: bool = False) -> BodyModel:
    """A closed-cylinder stick body with the SMPL-style 22-joint skeleton.

    Every bone between a joint and its child is a capped cylinder carried by
    the joint; the ring at the child end blends half-and-half with the child
    so that bending deforms the mesh as LBS does. The mesh is a union of
    closed components, so winding-number inside tests apply. With
    ``with_hands`` 30 finger joints are appended (geometry-free).
    """
    skel = list(_SKELETON)
    names = [s[0] for s in skel]
    if with_hands:
        for side, sign in (("left", 1.0), ("right", -1.0)):
            w = names.index(f"{side}_wrist")
            start = len(skel)
            for name, parent, pos, rad in _hand_joints(side, w, skel[w][2], sign):
                if isinstance(parent, tuple):
                    parent = start + parent[1]
                skel.append((name, parent, pos, rad))
            names = [s[0] for s in skel]
    J = len(skel)
    parents = np.array([s[1] for s in skel])
    rest = np.array([s[2] for s in skel], dtype=np.float64)
    n_body = 21
    n_hand = J - 1 - n_body

    meshes, weight_rows, radial = [], [], []
    per_ring = segments
    for j, (name, parent, pos, rad) in enumerate(skel[:22]):
        children = [k for k in range(22) if parents[k] == j]
        ends = [(rest[k], k) for k in children]
        if name in _LEAVES:
            ends.append((np.array(_LEAVES[name][0]), None))
        for end, child in ends:
            r = _LEAVES[name][1] if child is None else rad
            m = cylinder_mesh(rest[j], end, r, segments=segments, rings=rings)
            nv = len(m.vertices)
            W = np.zeros((nv, J))
            W[:, j] = 1.0
            distal = list(range(rings * per_ring, (rings + 1) * per_ring)) + [nv - 1]
            if child is not None:
                W[distal, j] = 0.5
                W[distal, child] = 0.5
            axis = (end - rest[j]) / np.linalg.norm(end - rest[j])
            d = m.vertices - rest[j]
            rd = d - np.outer(d @ axis, axis)
            n = np.linalg.norm(rd, axis=1, keepdims=True)
            rd = np.divide(rd, n, out=np.zeros_like(rd), where=n > 1e-12)
            meshes.append(m)
            weight_rows.append(W)
            radial.append((rd, len(meshes) - 1))
    mesh = concatenate_meshes(meshes)
    weights = np.concatenate(weight_rows)
    shape_dirs = np.zeros((len(mesh.vertices), 3, n_shape))
    row = 0
    for rd, seg in radial:
        nv = len(rd)
        if n_shape:
            shape_dirs[row:row + nv, :, seg % n_shape] = 0.01 * rd
        row += nv
    return BodyModel(
        template=mesh.vertices,
        faces=mesh.triangles,
        joints_rest=rest,
        parents=parents,
        weights=weights,
        shape_dirs=shape_dirs,
        n_body=n_body,
        n_hand=n_hand,
        joint_names=tuple(names),
    )
