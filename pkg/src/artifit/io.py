"""File formats: kinematic XML subset, OBJ/PLY meshes and clouds, the VOXG
voxel container, body assets, JSON documents and CSV sequences."""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from xml.parsers import expat

import numpy as np
from scipy.spatial.transform import Rotation

from .body import BodyModel, BodyParams
from .geometry import PointSet, TriMesh
from .kinematics import (JOINT_KINDS, Joint, KinematicModel, Part, PartPose, homogeneous, validate_model)
from .voxel import GridSpec, VoxelGrid

log = logging.getLogger(__name__)

VOXEL_MAGIC = b"VOXG"
VOXEL_VERSION = 1
_VOXEL_HEADER = struct.Struct("<4sI3I3f3f")
FIXED = "fixed"


class ParseError(ValueError):
    """Malformed input; ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(ValueError):
    """A binary container violates its format."""


# ---------------------------------------------------------------------------
# Atomic writes


def atomic_write(path, data: bytes | str):
    """Write via a temporary file in the target directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps_json(obj))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg}", e.lineno) from None


# ---------------------------------------------------------------------------
# Kinematic XML


@dataclass
class _Node:
    tag: str
    attrib: dict
    line: int
    children: list = field(default_factory=list)

    def find(self, tag):
        for c in self.children:
            if c.tag == tag:
                return c
        return None

    def findall(self, tag):
        return [c for c in self.children if c.tag == tag]


def _parse_tree(data) -> _Node:
    if isinstance(data, str):
        data = data.encode("utf-8")
    parser = expat.ParserCreate()
    stack: list[_Node] = []
    root: list[_Node] = []

    def start(tag, attrib):
        node = _Node(tag, dict(attrib), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(data, True)
    except expat.ExpatError as e:
        raise ParseError(expat.ErrorString(e.code), e.lineno) from None
    return root[0]


def _floats(node: _Node | None, key: str, n: int, default) -> np.ndarray:
    if node is None or key not in node.attrib:
        return np.array(default, dtype=np.float64)
    try:
        vals = [float(v) for v in node.attrib[key].split()]
    except ValueError:
        raise ParseError(f"<{node.tag} {key}> is not numeric", node.line) from None
    if len(vals) != n:
        raise ParseError(f"<{node.tag} {key}> needs {n} numbers, got {len(vals)}", node.line)
    return np.array(vals)


def _origin(node: _Node | None) -> np.ndarray:
    xyz = _floats(node, "xyz", 3, [0.0, 0.0, 0.0])
    rpy = _floats(node, "rpy", 3, [0.0, 0.0, 0.0])
    return homogeneous(Rotation.from_euler("xyz", rpy).as_matrix(), xyz)


def _limit(node: _Node | None):
    if node is None:
        return None
    try:
        lo, hi = float(node.attrib["lower"]), float(node.attrib["upper"])
    except (KeyError, ValueError):
        raise ParseError(f"<{node.tag}> needs numeric lower and upper", node.line) from None
    return (lo, hi)


def _link_meshes(link: _Node) -> list:
    out = []
    for tag in ("visual", "collision"):
        for vis in link.findall(tag):
            geom = vis.find("geometry")
            mesh = geom.find("mesh") if geom is not None else None
            if mesh is None or "filename" not in mesh.attrib:
                continue
            out.append((mesh.attrib["filename"], _origin(vis.find("origin"))))
        if out:
            break
    return out


def parse_kinematic_xml(data) -> KinematicModel:
    """Kinematic model from the supported XML subset.

    Links become parts (their visual mesh references kept unresolved with
    local transforms). Joint types are revolute, prismatic, the
    ``revolute_prismatic`` extension (``<limit>`` bounds the angle,
    ``<shift_limit>`` the displacement), and fixed; fixed joints merge the
    child link into its parent.
    """
    root = _parse_tree(data)
    if root.tag != "robot":
        raise ParseError(f"root element must be <robot>, got <{root.tag}>", root.line)
    links: dict[str, _Node] = {}
    for ln in root.findall("link"):
        name = ln.attrib.get("name")
        if not name:
            raise ParseError("<link> without a name", ln.line)
        if name in links:
            raise ParseError(f"duplicate link {name!r}", ln.line)
        links[name] = ln
    if not links:
        raise ParseError("no <link> elements", root.line)

    raw = []
    parent_of: dict[str, tuple[str, _Node]] = {}
    for jn in root.findall("joint"):
        kind = jn.attrib.get("type")
        if kind not in JOINT_KINDS and kind != FIXED:
            raise ParseError(f"unknown joint type {kind!r}", jn.line)
        ends = []
        for tag in ("parent", "child"):
            e = jn.find(tag)
            if e is None or "link" not in e.attrib:
                raise ParseError(f"joint {jn.attrib.get('name', '')!r} lacks <{tag} link>", jn.line)
            if e.attrib["link"] not in links:
                raise ParseError(f"joint {jn.attrib.get('name', '')!r} references missing link "
                                 f"{e.attrib['link']!r}", e.line)
            ends.append(e.attrib["link"])
        parent, child = ends
        if child in parent_of:
            raise ParseError(f"link {child!r} has more than one parent", jn.line)
        parent_of[child] = (parent, jn)
        axis = _floats(jn.find("axis"), "xyz", 3, [1.0, 0.0, 0.0])
        if kind != FIXED:
            n = np.linalg.norm(axis)
            if n == 0:
                raise ParseError("joint axis is zero", jn.line)
            axis = axis / n
        raw.append(dict(name=jn.attrib.get("name", ""), kind=kind, parent=parent, child=child,
                        origin=_origin(jn.find("origin")), axis=axis, limits=_limit(jn.find("limit")),
                        shift=_limit(jn.find("shift_limit")), node=jn))

    # cycles: walking up from any link must end at a parentless link
    for name in links:
        seen, p = {name}, name
        while p in parent_of:
            p, jn = parent_of[p]
            if p in seen:
                raise ParseError(f"joint cycle through link {p!r}", jn.line)
            seen.add(p)
    roots = [n for n in links if n not in parent_of]
    if len(roots) != 1:
        raise ParseError(f"expected one root link, found {len(roots)}: {roots}", root.line)

    # host link and host-to-link transform after folding fixed joints
    by_child = {r["child"]: r for r in raw}

    def host(name):
        T = np.eye(4)
        while name in by_child and by_child[name]["kind"] == FIXED:
            r = by_child[name]
            T = r["origin"] @ T
            name = r["parent"]
        return name, T

    part_names = [n for n in links if n not in by_child or by_child[n]["kind"] != FIXED]
    index = {n: i for i, n in enumerate(part_names)}
    meshes = {n: [] for n in part_names}
    for name, ln in links.items():
        h, T = host(name)
        meshes[h].extend((ref, T @ M) for ref, M in _link_meshes(ln))
    parts = tuple(Part(n, tuple(meshes[n])) for n in part_names)
    joints = []
    for r in raw:
        if r["kind"] == FIXED:
            continue
        h, T = host(r["parent"])
        joints.append(Joint(r["kind"], index[h], index[r["child"]], axis=r["axis"], origin=T @ r["origin"],
                            limits=r["limits"], shift_limits=r["shift"], name=r["name"]))
    model = KinematicModel(parts, tuple(joints), index[host(roots[0])[0]])
    problems = validate_model(model)
    if problems:
        raise ParseError("; ".join(v.message for v in problems))
    return model


def _fmt(v) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(v).reshape(-1))


def _origin_attrs(T) -> str:
    rpy = Rotation.from_matrix(np.asarray(T)[:3, :3]).as_euler("xyz")
    return f'xyz="{_fmt(np.asarray(T)[:3, 3])}" rpy="{_fmt(rpy)}"'


def serialize_kinematic_xml(model: KinematicModel, name: str = "object") -> str:
    lines = ['<?xml version="1.0"?>', f'<robot name="{name}">']
    for p in model.parts:
        if not p.meshes:
            lines.append(f'  <link name="{p.name}"/>')
            continue
        lines.append(f'  <link name="{p.name}">')
        for ref, T in p.meshes:
            lines += ["    <visual>", f"      <origin {_origin_attrs(T)}/>",
                      f'      <geometry><mesh filename="{ref}"/></geometry>', "    </visual>"]
        lines.append("  </link>")
    for ji, j in enumerate(model.joints):
        jname = j.name or f"joint{ji}"
        lines += [f'  <joint name="{jname}" type="{j.kind}">',
                  f'    <parent link="{model.parts[j.parent].name}"/>',
                  f'    <child link="{model.parts[j.child].name}"/>',
                  f"    <origin {_origin_attrs(j.origin)}/>",
                  f'    <axis xyz="{_fmt(j.axis)}"/>']
        if j.limits is not None:
            lines.append(f'    <limit lower="{j.limits[0]!r}" upper="{j.limits[1]!r}"/>')
        if j.shift_limits is not None:
            lines.append(f'    <shift_limit lower="{j.shift_limits[0]!r}" upper="{j.shift_limits[1]!r}"/>')
        lines.append("  </joint>")
    lines.append("</robot>")
    return "\n".join(lines) + "\n"


def load_kinematic_xml(path) -> KinematicModel:
    return parse_kinematic_xml(Path(path).read_bytes())


def load_part_meshes(model: KinematicModel, base_dir) -> list[TriMesh]:
    """Each part's meshes, in its part frame, merged into one mesh."""
    from .geometry import concatenate_meshes
    out = []
    for p in model.parts:
        ms = [load_mesh(Path(base_dir) / ref).transformed(T) for ref, T in p.meshes]
        out.append(concatenate_meshes(ms) if ms else TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)))
    return out


# ---------------------------------------------------------------------------
# Meshes


def _fan(poly: list[int]) -> list[list[int]]:
    return [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]


def _load_obj(text: str) -> TriMesh:
    V, F = [], []
    warned = False
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            try:
                V.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise ParseError("bad vertex", ln) from None
            if len(V[-1]) != 3:
                raise ParseError("vertex needs three coordinates", ln)
        elif parts[0] == "f":
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError:
                raise ParseError("bad face", ln) from None
            if len(idx) < 3:
                raise ParseError("face needs at least three vertices", ln)
            idx = [i - 1 if i > 0 else len(V) + i for i in idx]
            if len(idx) > 3 and not warned:
                log.warning("fan-triangulating non-triangular faces")
                warned = True
            F.extend(_fan(idx))
    V = np.array(V, dtype=np.float64).reshape(-1, 3)
    F = np.array(F, dtype=np.int64).reshape(-1, 3)
    if len(F) and (F.min() < 0 or F.max() >= len(V)):
        raise ParseError("face index out of range")
    return TriMesh(V, F)


def _save_obj(mesh: TriMesh) -> str:
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.astype(np.float32).astype(np.float64).tolist()]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(out) + "\n"


_PLY_TYPES = {"char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
              "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
              "float": "f4", "float32": "f4", "double": "f8", "float64": "f8"}


def _read_ply(data: bytes):
    """(vertex fields dict, faces list or None) from ASCII or binary PLY."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing magic or end_header)")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[data.index(b"\n", end) + 1:]
    fmt = None
    elements = []
    for ln, line in enumerate(header, 1):
        p = line.split()
        if not p:
            continue
        if p[0] == "format":
            fmt = p[1]
        elif p[0] == "element":
            elements.append([p[1], int(p[2]), []])
        elif p[0] == "property":
            if not elements:
                raise ParseError("property before element", ln)
            if p[1] == "list":
                elements[-1][2].append((p[4], "list", p[2], p[3]))
            else:
                if p[1] not in _PLY_TYPES:
                    raise ParseError(f"unsupported property type {p[1]!r}", ln)
                elements[-1][2].append((p[2], p[1]))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    verts, faces = {}, None
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(tokens):
                raise ParseError("truncated PLY body")
            out = tokens[pos:pos + n]
            pos += n
            return out

        for name, count, props in elements:
            if name == "vertex":
                cols = {p[0]: [] for p in props}
                for _ in range(count):
                    for p in props:
                        if p[1] == "list":
                            n = int(take(1)[0])
                            take(n)
                        else:
                            cols[p[0]].append(float(take(1)[0]))
                verts = {k: np.array(v) for k, v in cols.items()}
            else:
                rows = []
                for _ in range(count):
                    row = None
                    for p in props:
                        if p[1] == "list":
                            n = int(take(1)[0])
                            row = [int(v) for v in take(n)]
                        else:
                            take(1)
                    rows.append(row)
                if name == "face":
                    faces = rows
        return verts, faces
    endian = "<" if fmt == "binary_little_endian" else ">"
    off = 0
    for name, count, props in elements:
        if all(p[1] != "list" for p in props):
            dt = np.dtype([(p[0], endian + _PLY_TYPES[p[1]]) for p in props])
            need = dt.itemsize * count
            if off + need > len(body):
                raise ParseError("truncated PLY body")
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
            off += need
            if name == "vertex":
                verts = {p[0]: arr[p[0]].astype(np.float64) for p in props}
        else:
            rows = []
            for _ in range(count):
                row = None
                for p in props:
                    if p[1] == "list":
                        ct = np.dtype(endian + _PLY_TYPES[p[2]])
                        it = np.dtype(endian + _PLY_TYPES[p[3]])
                        if off + ct.itemsize > len(body):
                            raise ParseError("truncated PLY body")
                        n = int(np.frombuffer(body, ct, 1, off)[0])
                        off += ct.itemsize
                        if off + n * it.itemsize > len(body):
                            raise ParseError("truncated PLY body")
                        row = np.frombuffer(body, it, n, off).astype(np.int64).tolist()
                        off += n * it.itemsize
                    else:
                        off += np.dtype(_PLY_TYPES[p[1]]).itemsize
                rows.append(row)
            if name == "face":
                faces = rows
    return verts, faces


def _ply_points(verts) -> np.ndarray:
    if not all(k in verts for k in "xyz"):
        raise ParseError("PLY vertices need x, y and z")
    return np.stack([verts["x"], verts["y"], verts["z"]], axis=1)


def _save_ply(points, faces=None, normals=None) -> bytes:
    P = np.asarray(points, dtype="<f4").reshape(-1, 3)
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {len(P)}",
            "property float x", "property float y", "property float z"]
    cols = [P]
    if normals is not None:
        head += ["property float nx", "property float ny", "property float nz"]
        cols.append(np.asarray(normals, dtype="<f4").reshape(-1, 3))
    if faces is not None:
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    out = ("\n".join(head) + "\n").encode("ascii") + np.ascontiguousarray(np.hstack(cols), dtype="<f4").tobytes()
    if faces is not None:
        F = np.asarray(faces, dtype="<i4").reshape(-1, 3)
        rec = np.zeros(len(F), dtype=[("n", "u1"), ("v", "<i4", (3,))])
        rec["n"] = 3
        rec["v"] = F
        out += rec.tobytes()
    return out


def load_mesh(path, fmt: str | None = None) -> TriMesh:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    data = path.read_bytes()
    if fmt == "obj":
        return _load_obj(data.decode("utf-8"))
    if fmt == "ply":
        verts, faces = _read_ply(data)
        F = []
        for row in faces or []:
            if len(row) < 3:
                raise ParseError("face needs at least three vertices")
            F.extend(_fan(row))
        if faces and any(len(r) > 3 for r in faces):
            log.warning("fan-triangulating non-triangular faces")
        V = _ply_points(verts)
        F = np.array(F, dtype=np.int64).reshape(-1, 3)
        if len(F) and (F.min() < 0 or F.max() >= len(V)):
            raise ParseError("face index out of range")
        return TriMesh(V, F)
    raise ParseError(f"unsupported mesh format {fmt!r}")


def save_mesh(path, mesh: TriMesh, fmt: str | None = None):
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        atomic_write(path, _save_obj(mesh))
    elif fmt == "ply":
        atomic_write(path, _save_ply(mesh.vertices, mesh.triangles))
    else:
        raise ParseError(f"unsupported mesh format {fmt!r}")


def load_points(path) -> PointSet:
    """Point cloud from PLY (normals kept when present) or OBJ vertices."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return PointSet(load_mesh(path).vertices)
    verts, _ = _read_ply(path.read_bytes())
    P = _ply_points(verts)
    N = np.stack([verts[k] for k in ("nx", "ny", "nz")], 1) if all(k in verts for k in ("nx", "ny", "nz")) else None
    return PointSet(P, N)


def save_points(path, points: PointSet):
    atomic_write(path, _save_ply(points.points, normals=points.normals))


# ---------------------------------------------------------------------------
# Voxel container


def encode_voxel(grid: VoxelGrid) -> bytes:
    spec = grid.spec
    head = _VOXEL_HEADER.pack(VOXEL_MAGIC, VOXEL_VERSION, *spec.resolution, *spec.origin.astype(np.float32),
                              *spec.extent.astype(np.float32))
    return head + np.ascontiguousarray(grid.occupancy, dtype="<f4").tobytes()


def decode_voxel(data: bytes) -> VoxelGrid:
    if len(data) < _VOXEL_HEADER.size:
        raise FormatError("truncated voxel header")
    magic, version, nx, ny, nz, ox, oy, oz, ex, ey, ez = _VOXEL_HEADER.unpack_from(data)
    if magic != VOXEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VOXEL_VERSION:
        raise FormatError(f"unsupported version {version}")
    res = (nx, ny, nz)
    if min(res) < 1:
        raise FormatError(f"resolution {res} must be positive")
    n = nx * ny * nz
    payload = data[_VOXEL_HEADER.size:]
    if len(payload) != 4 * n:
        raise FormatError(f"payload has {len(payload)} bytes, header implies {4 * n}")
    occ = np.frombuffer(payload, dtype="<f4").reshape(res)
    if not np.all((occ >= 0) & (occ <= 1)):
        raise FormatError("occupancy outside [0, 1]")
    ext = np.array([ex, ey, ez], dtype=np.float32).astype(np.float64)
    if np.any(ext <= 0):
        raise FormatError("extent must be positive")
    try:
        spec = GridSpec(res, np.array([ox, oy, oz], dtype=np.float32).astype(np.float64), ext)
    except ValueError as e:
        raise FormatError(str(e)) from None
    return VoxelGrid(spec, occ.astype(np.float64))


def save_voxel(path, grid: VoxelGrid):
    atomic_write(path, encode_voxel(grid))


def load_voxel(path) -> VoxelGrid:
    return decode_voxel(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Body assets and parameters

_BODY_ARRAYS = ("template", "faces", "joints_rest", "parents", "weights", "shape_dirs")


def save_body_asset(path, model: BodyModel):
    """NPZ container: the model arrays plus a JSON ``meta`` entry."""
    import io as _bio
    arrays = {k: getattr(model, k) for k in _BODY_ARRAYS}
    if model.joint_regressor is not None:
        arrays["joint_regressor"] = model.joint_regressor
    meta = {"n_body": model.n_body, "n_hand": model.n_hand, "joint_names": list(model.joint_names), "version": 1}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = _bio.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def load_body_asset(path) -> BodyModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            kw = {k: z[k] for k in _BODY_ARRAYS}
            reg = z["joint_regressor"] if "joint_regressor" in z.files else None
    except (KeyError, ValueError, OSError) as e:
        raise FormatError(f"bad body asset: {e}") from None
    return BodyModel(**kw, n_body=meta["n_body"], n_hand=meta["n_hand"], joint_regressor=reg,
                     joint_names=tuple(meta.get("joint_names", ())))


def load_body_params(path) -> BodyParams:
    try:
        return BodyParams.from_dict(read_json(path))
    except KeyError as e:
        raise ParseError(f"{path}: missing field {e}") from None


def pose_to_dict(root: PartPose, state=None) -> dict:
    d = {"rotation6d": root.rotation.tolist(), "translation": root.translation.tolist()}
    if state is not None:
        d["joint_state"] = np.asarray(state, dtype=np.float64).tolist()
    return d


def pose_from_dict(d: dict) -> tuple[PartPose, np.ndarray | None]:
    """Root pose from ``rotation6d`` or ``rotation`` (3x3) plus ``translation``."""
    try:
        if "rotation6d" in d:
            root = PartPose(np.asarray(d["rotation6d"], dtype=np.float64), np.asarray(d["translation"]))
        else:
            root = PartPose.from_matrix(homogeneous(np.asarray(d["rotation"], dtype=np.float64),
                                                    np.asarray(d["translation"], dtype=np.float64)))
    except KeyError as e:
        raise ParseError(f"pose lacks field {e}") from None
    state = d.get("joint_state")
    return root, (None if state is None else np.asarray(state, dtype=np.float64))


# ---------------------------------------------------------------------------
# CSV sequences


def load_sequences(path) -> np.ndarray:
    """(T, K) array from a CSV with one numeric column per joint (header optional)."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty CSV")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    try:
        data = np.array([[float(c) for c in r] for r in rows[start:]], dtype=np.float64)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from None
    if data.ndim != 2 or not len(data):
        raise ParseError(f"{path}: ragged or empty CSV")
    return data


def save_sequences(path, data, header=None):
    buf = []
    if header:
        buf.append(",".join(header))
    buf += [",".join(repr(float(v)) for v in row) for row in np.asarray(data).reshape(len(data), -1)]
    atomic_write(path, "\n".join(buf) + "\n")
