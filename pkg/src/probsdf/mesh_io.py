"""PLY export/import for extracted meshes and ground-truth point clouds.

Vertices carry x y z nx ny nz and a scalar ``confidence`` in [0, 1] (the
inlier-ratio heatmap channel); faces are vertex-index triples. Both ascii and
binary little-endian variants are supported and written deterministically.
"""

from __future__ import annotations

import numpy as np

__all__ = ["write_ply", "read_ply"]


def write_ply(mesh, path, binary: bool = True):
    """Write a TriangleMesh (or anything with positions/normals/confidence/
    triangles arrays) to PLY."""
    v = np.asarray(mesh.positions, dtype=np.float64)
    n = np.asarray(mesh.normals, dtype=np.float64)
    c = np.asarray(mesh.confidence, dtype=np.float64)
    f = np.asarray(mesh.triangles, dtype=np.int64)
    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join([
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {v.shape[0]}",
        "property float x", "property float y", "property float z",
        "property float nx", "property float ny", "property float nz",
        "property float confidence",
        f"element face {f.shape[0]}",
        "property list uchar int vertex_indices",
        "end_header",
    ]) + "\n"

    with open(path, "wb") as out:
        out.write(header.encode("ascii"))
        if binary:
            vert = np.empty((v.shape[0], 7), dtype="<f4")
            vert[:, 0:3] = v
            vert[:, 3:6] = n
            vert[:, 6] = c
            out.write(vert.tobytes())
            if f.shape[0]:
                face = np.empty(f.shape[0],
                                dtype=[("n", "u1"), ("i", "<i4", (3,))])
                face["n"] = 3
                face["i"] = f
                out.write(face.tobytes())
        else:
            lines = []
            for i in range(v.shape[0]):
                lines.append(f"{v[i,0]:.9g} {v[i,1]:.9g} {v[i,2]:.9g} "
                             f"{n[i,0]:.9g} {n[i,1]:.9g} {n[i,2]:.9g} "
                             f"{c[i]:.9g}")
            for i in range(f.shape[0]):
                lines.append(f"3 {f[i,0]} {f[i,1]} {f[i,2]}")
            out.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))


def read_ply(path):
    """Read a PLY file into a dict with 'positions', 'triangles', and any
    extra vertex properties present ('normals', 'confidence').

    Handles ascii and binary little-endian files with float32/float64 vertex
    properties; enough for this package's own output and simple ground-truth
    point clouds.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError("not a PLY file (missing end_header)")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    if not header or header[0].strip() != "ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_type, prop_name) or list descriptor])
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")

    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8",
                "float64": "<f8", "uchar": "u1", "uint8": "u1",
                "int": "<i4", "int32": "<i4", "uint": "<u4", "short": "<i2",
                "ushort": "<u2", "char": "i1"}
    out = {}
    offset = 0
    ascii_lines = body.decode("ascii").splitlines() if fmt == "ascii" else None
    line_no = 0
    for name, count, props in elements:
        is_list = any(p[0] == "list" for p in props)
        if not is_list:
            dtype = np.dtype([(p[1], type_map[p[0]]) for p in props])
            if fmt == "ascii":
                rows = [ascii_lines[line_no + i].split() for i in range(count)]
                line_no += count
                arr = np.array([tuple(r) for r in rows], dtype=dtype)
            else:
                arr = np.frombuffer(body, dtype=dtype, count=count,
                                    offset=offset)
                offset += dtype.itemsize * count
            if name == "vertex":
                fields = arr.dtype.names
                out["positions"] = np.stack(
                    [arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                if all(k in fields for k in ("nx", "ny", "nz")):
                    out["normals"] = np.stack(
                        [arr["nx"], arr["ny"], arr["nz"]],
                        axis=1).astype(np.float64)
                if "confidence" in fields:
                    out["confidence"] = arr["confidence"].astype(np.float64)
        else:
            if len(props) != 1:
                raise ValueError("mixed list/scalar elements unsupported")
            _, cnt_t, idx_t, _ = props[0]
            tris = np.empty((count, 3), dtype=np.int64)
            if fmt == "ascii":
                for i in range(count):
                    parts = ascii_lines[line_no + i].split()
                    if int(parts[0]) != 3:
                        raise ValueError("non-triangle face")
                    tris[i] = [int(parts[1]), int(parts[2]), int(parts[3])]
                line_no += count
            else:
                cnt_dt = np.dtype(type_map[cnt_t])
                idx_dt = np.dtype(type_map[idx_t])
                rec = np.dtype([("n", cnt_dt), ("i", idx_dt, (3,))])
                arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
                offset += rec.itemsize * count
                if count and not np.all(arr["n"] == 3):
                    raise ValueError("non-triangle face")
                tris[:] = arr["i"]
            if name == "face":
                out["triangles"] = tris
    out.setdefault("triangles", np.empty((0, 3), dtype=np.int64))
    return out
