"""OBJ and PLY readers/writers.

Only geometry is handled: ``v``/``f`` records for OBJ, and the ``x y z``
vertex properties plus the ``vertex_indices`` face list for PLY. Indices are
0-based everywhere inside the package; OBJ's 1-based (and negative relative)
indices are converted on read and write.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import MeshIOError, ValidationError
from .mesh import Mesh, PointCloud

__all__ = ["load_mesh", "save_mesh", "load_target", "save_point_cloud", "read_obj", "read_ply", "write_obj", "write_ply"]

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _format_of(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("obj", "ply"):
        raise MeshIOError(f"unsupported mesh format {fmt!r} for {path}")
    return fmt


def load_mesh(path, format=None) -> Mesh:
    """Read a triangle mesh from an OBJ or PLY file.

    The format is taken from ``format`` or else the file suffix. Vertex order
    is preserved. Non-triangular faces are rejected.
    """
    path = os.fspath(path)
    fmt = _format_of(path, format)
    if not os.path.isfile(path):
        raise MeshIOError(f"no such file: {path}")
    vertices, faces = read_obj(path) if fmt == "obj" else read_ply(path)
    try:
        return Mesh(vertices, faces)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_mesh(path, mesh: Mesh, format=None, binary=False, vertex_scalars=None):
    """Write ``mesh`` as OBJ (9 significant digits) or PLY (ascii or binary LE).

    ``vertex_scalars`` maps property names to per-vertex int arrays and is
    only supported for PLY (used for part labels).
    """
    path = os.fspath(path)
    fmt = _format_of(path, format)
    if fmt == "obj":
        if vertex_scalars:
            raise MeshIOError("per-vertex scalars need PLY output")
        write_obj(path, mesh.vertices, mesh.faces)
    else:
        write_ply(path, mesh.vertices, mesh.faces, binary=binary, vertex_scalars=vertex_scalars)


def load_target(path, format=None):
    """Read a target surface: a :class:`Mesh`, or a :class:`PointCloud` for a face-less PLY.

    Point clouds need ``nx ny nz`` vertex properties.
    """
    path = os.fspath(path)
    fmt = _format_of(path, format)
    if not os.path.isfile(path):
        raise MeshIOError(f"no such file: {path}")
    if fmt == "obj":
        return load_mesh(path, fmt)
    rows, faces = read_ply_full(path)
    if len(faces):
        return load_mesh(path, fmt)
    if rows.shape[1] < 6:
        raise MeshIOError(f"{path}: point cloud target needs nx ny nz normals")
    try:
        return PointCloud(rows[:, :3], rows[:, 3:6])
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_point_cloud(path, cloud: PointCloud, binary=False):
    write_ply(path, cloud.points, np.zeros((0, 3), dtype=np.int64), binary=binary, normals=cloud.normals)


def read_obj(path):
    vertices, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshIOError(f"{path}: malformed vertex at line {lineno}")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshIOError(f"{path}: malformed vertex at line {lineno}") from None
            elif tag == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise MeshIOError(
                        f"{path}: non-triangular face at line {lineno} ({len(refs)} vertices)"
                    )
                face = []
                for ref in refs:
                    try:
                        k = int(ref.split("/")[0])
                    except ValueError:
                        raise MeshIOError(f"{path}: malformed face at line {lineno}") from None
                    if k > 0:
                        face.append(k - 1)
                    elif k < 0:
                        face.append(len(vertices) + k)
                    else:
                        raise MeshIOError(f"{path}: zero face index at line {lineno}")
                faces.append(face)
    v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return v, f


def write_obj(path, vertices, faces):
    with open(path, "w", newline="\n") as fh:
        fh.write("# morphfit\n")
        for x, y, z in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in np.asarray(faces, dtype=np.int64) + 1:
            fh.write(f"f {a} {b} {c}\n")


def _read_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise MeshIOError(f"{path}: not a PLY file")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MeshIOError(f"{path}: unexpected end of header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshIOError(f"{path}: property before element at line {lineno}")
            if parts[1] == "list":
                elements[-1]["props"].append(
                    (parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
                )
            else:
                elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]], None))
        elif parts[0] == "end_header":
            return fmt, elements, lineno
        else:
            raise MeshIOError(f"{path}: unknown header keyword at line {lineno}")


def read_ply(path):
    """Vertices ``(n, 3)`` and faces ``(f, 3)`` of a PLY file."""
    vertices, faces = read_ply_full(path)
    return vertices[:, :3].copy(), faces


def read_ply_full(path):
    """Like :func:`read_ply` but vertex rows carry ``nx ny nz`` when present."""
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _read_ply_header(fh, path)
        if fmt == "ascii":
            return _read_ply_ascii(fh, elements, path, header_lines)
        if fmt == "binary_little_endian":
            return _read_ply_binary(fh, elements, path)
        raise MeshIOError(f"{path}: unsupported PLY format {fmt!r}")


def _face_list_name(props):
    for name, _, count_t in props:
        if count_t is not None and name in ("vertex_indices", "vertex_index"):
            return name
    return None


def _vertex_keys(names):
    keys = ["x", "y", "z"]
    if all(k in names for k in ("nx", "ny", "nz")):
        keys += ["nx", "ny", "nz"]
    return keys


def _read_ply_ascii(fh, elements, path, lineno):
    vertices = faces = None
    for el in elements:
        rows = []
        for _ in range(el["count"]):
            lineno += 1
            line = fh.readline()
            if not line:
                raise MeshIOError(f"{path}: truncated {el['name']} data at line {lineno}")
            tokens = line.split()
            record, pos = {}, 0
            try:
                for name, t, count_t in el["props"]:
                    if count_t is None:
                        record[name] = float(tokens[pos])
                        pos += 1
                    else:
                        cnt = int(tokens[pos])
                        record[name] = [int(x) for x in tokens[pos + 1:pos + 1 + cnt]]
                        if len(record[name]) != cnt:
                            raise IndexError
                        pos += 1 + cnt
            except (IndexError, ValueError):
                raise MeshIOError(f"{path}: malformed {el['name']} record at line {lineno}") from None
            if el["name"] == "face":
                key = _face_list_name(el["props"])
                if key is None:
                    raise MeshIOError(f"{path}: face element without vertex_indices")
                if len(record[key]) != 3:
                    raise MeshIOError(
                        f"{path}: non-triangular face at line {lineno} ({len(record[key])} vertices)"
                    )
                rows.append(record[key])
            elif el["name"] == "vertex":
                rows.append([record[k] for k in _vertex_keys(record)])
        if el["name"] == "vertex":
            vertices = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 3))
        elif el["name"] == "face":
            faces = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if vertices is None:
        raise MeshIOError(f"{path}: no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return vertices, faces


def _read_ply_binary(fh, elements, path):
    vertices = faces = None
    for el in elements:
        props = el["props"]
        if all(c is None for _, _, c in props):
            dt = np.dtype([(name, "<" + t) for name, t, _ in props])
            data = np.frombuffer(fh.read(dt.itemsize * el["count"]), dtype=dt)
            if len(data) != el["count"]:
                raise MeshIOError(f"{path}: truncated {el['name']} data")
            if el["name"] == "vertex":
                keys = _vertex_keys(data.dtype.names)
                vertices = np.stack([data[k] for k in keys], axis=1).astype(np.float64)
            continue
        if el["name"] != "face" or len(props) != 1:
            raise MeshIOError(f"{path}: unsupported list layout in element {el['name']!r}")
        name, count_t, idx_t = props[0]
        # fixed-size fast path, verified by checking every count byte
        dt = np.dtype([("n", "<" + count_t), ("i", "<" + idx_t, (3,))])
        blob = fh.read(dt.itemsize * el["count"])
        if len(blob) != dt.itemsize * el["count"]:
            raise MeshIOError(f"{path}: truncated face data")
        data = np.frombuffer(blob, dtype=dt)
        bad = np.flatnonzero(data["n"] != 3)
        if len(bad):
            raise MeshIOError(
                f"{path}: non-triangular face at record {int(bad[0])} ({int(data['n'][bad[0]])} vertices)"
            )
        faces = data["i"].astype(np.int64)
    if vertices is None:
        raise MeshIOError(f"{path}: no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return vertices, faces


def write_ply(path, vertices, faces, binary=False, vertex_scalars=None, normals=None):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    scalars = dict(vertex_scalars or {})
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              "comment morphfit", f"element vertex {len(vertices)}",
              "property double x", "property double y", "property double z"]
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
        vertices = np.hstack([vertices, np.asarray(normals, dtype=np.float64)])
    header += [f"property int {name}" for name in scalars]
    header += [f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            coords = ["x", "y", "z"] + (["nx", "ny", "nz"] if normals is not None else [])
            vdt = np.dtype([(k, "<f8") for k in coords] + [(name, "<i4") for name in scalars])
            vrec = np.empty(len(vertices), dtype=vdt)
            for k, col in zip(coords, vertices.T):
                vrec[k] = col
            for name, val in scalars.items():
                vrec[name] = val
            fh.write(vrec.tobytes())
            fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
            frec = np.empty(len(faces), dtype=fdt)
            frec["n"] = 3
            frec["i"] = faces
            fh.write(frec.tobytes())
        else:
            cols = [np.asarray(v) for v in scalars.values()]
            lines = []
            for k, row in enumerate(vertices.tolist()):
                extra = "".join(f" {int(c[k])}" for c in cols)
                lines.append(" ".join(repr(x) for x in row) + extra)
            lines += [f"3 {a} {b} {c}" for a, b, c in faces.tolist()]
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))

