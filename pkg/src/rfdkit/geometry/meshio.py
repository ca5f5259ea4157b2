"""Binary little-endian PLY I/O for point clouds and triangle meshes.

Point clouds carry float32 positions plus an int32 instance id per point.
Meshes carry float32 vertices and uchar-counted int32 triangle lists. An OBJ
writer is provided for quick external viewing of reconstructed meshes.
"""

from __future__ import annotations

import numpy as np

from ..errors import FormatError
from .mesh import TriangleMesh

_PLY_TYPES = {
    "float": ("<f4", 4),
    "float32": ("<f4", 4),
    "int": ("<i4", 4),
    "int32": ("<i4", 4),
    "uchar": ("<u1", 1),
    "uint8": ("<u1", 1),
}


def _parse_header(blob: bytes):
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatError("not a ply file")
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in lines[1:3]:
        raise FormatError("ply must be binary little endian 1.0")
    elements = []  # (name, count, [(prop_name, type) or (prop_name, 'list', count_t, item_t)])
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("format", "comment"):
            continue
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError("ply property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1][2].append((parts[2], parts[1]))
        else:
            raise FormatError(f"unsupported ply header line: {line!r}")
    return elements, blob[end + len(b"end_header\n"):]


def _read_fixed(body: bytes, offset: int, count: int, props):
    fields = []
    for p in props:
        if p[1] == "list":
            raise FormatError("list property in fixed element")
        if p[1] not in _PLY_TYPES:
            raise FormatError(f"unsupported ply type {p[1]!r}")
        fields.append((p[0], _PLY_TYPES[p[1]][0]))
    dt = np.dtype(fields)
    need = dt.itemsize * count
    if offset + need > len(body):
        raise FormatError("ply payload truncated")
    return np.frombuffer(body, dtype=dt, count=count, offset=offset), offset + need


def write_point_ply(path, points: np.ndarray, instance_ids: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    ids = np.asarray(instance_ids, dtype=np.int32).reshape(-1)
    if len(ids) != len(points):
        raise FormatError("instance id count disagrees with point count")
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property int instance_id\nend_header\n"
    )
    rec = np.empty(len(points), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("id", "<i4")])
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["id"] = ids
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_point_ply(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    elements, body = _parse_header(blob)
    for name, count, props in elements:
        if name != "vertex":
            raise FormatError(f"unexpected ply element {name!r} in point cloud")
        names = [p[0] for p in props]
        if names != ["x", "y", "z", "instance_id"]:
            raise FormatError(f"unexpected point properties {names}")
        rec, offset = _read_fixed(body, 0, count, props)
        if offset != len(body):
            raise FormatError("trailing bytes after ply payload")
        points = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float32)
        return points, rec["instance_id"].astype(np.int32)
    raise FormatError("ply has no vertex element")


def write_mesh_ply(path, mesh: TriangleMesh) -> None:
    verts = mesh.vertices.astype(np.float32)
    faces = mesh.faces.astype(np.int32)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(verts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    vrec = np.empty(len(verts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    vrec["x"], vrec["y"], vrec["z"] = verts[:, 0], verts[:, 1], verts[:, 2]
    frec = np.empty(len(faces), dtype=[("n", "<u1"), ("i", "<i4", (3,))])
    frec["n"] = 3
    frec["i"] = faces
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vrec.tobytes())
        fh.write(frec.tobytes())


def read_mesh_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        blob = fh.read()
    elements, body = _parse_header(blob)
    verts = None
    faces = None
    offset = 0
    for name, count, props in elements:
        if name == "vertex":
            if [p[0] for p in props] != ["x", "y", "z"]:
                raise FormatError("mesh vertex element must hold x, y, z")
            rec, offset = _read_fixed(body, offset, count, props)
            verts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        elif name == "face":
            if len(props) != 1 or props[0][1] != "list":
                raise FormatError("mesh face element must hold one list property")
            _, _, count_t, item_t = props[0]
            if _PLY_TYPES.get(count_t) != ("<u1", 1) or _PLY_TYPES.get(item_t) != ("<i4", 4):
                raise FormatError("face lists must be uchar-counted int32")
            dt = np.dtype([("n", "<u1"), ("i", "<i4", (3,))])
            need = dt.itemsize * count
            if offset + need > len(body):
                raise FormatError("ply payload truncated")
            rec = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += need
            if count and not np.all(rec["n"] == 3):
                raise FormatError("only triangle faces are supported")
            faces = rec["i"].astype(np.int64)
        else:
            raise FormatError(f"unexpected ply element {name!r} in mesh")
    if offset != len(body):
        raise FormatError("trailing bytes after ply payload")
    if verts is None or faces is None:
        raise FormatError("mesh ply must hold vertex and face elements")
    return TriangleMesh(verts, faces)


def write_obj(path, mesh: TriangleMesh, name: str = "object") -> None:
    lines = [f"o {name}"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
