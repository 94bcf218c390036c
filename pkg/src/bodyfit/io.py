"""Readers and writers for meshes, point clouds and reflectivity volumes.

Formats:

* OBJ: ``v x y z`` and ``f a b c`` lines, 1-based indices (``a/b/c``
  tokens are accepted; only the vertex index is used).
* PLY: ASCII, ``element vertex`` with float ``x y z`` and an optional
  ``panel`` string-like property written as a trailing token.
* XYZ: one ``x y z`` per line.
* Volume: ``<name>.f32raw`` (little-endian float32, x fastest) plus a
  ``<name>.json`` sidecar with dims, spacing, origin, depth_axis,
  panel_pose and panel_id.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .geometry import RigidTransform, TriangleMesh
from .pointcloud import PointCloud, ReflectivityVolume

FLOAT_FMT = "%.17g"


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None


def write_obj(mesh: TriangleMesh, path):
    lines = ["v " + " ".join(FLOAT_FMT % c for c in v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(i + 1) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for n, line in enumerate(_read_text(path).splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) < 3:
                    raise ValueError("face needs 3 indices")
                # fan-triangulate polygons
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0] - 1, idx[k] - 1, idx[k + 1] - 1))
        except ValueError as exc:
            raise SchemaError(f"{path}:{n}: {exc}") from None
    if not verts:
        raise SchemaError(f"{path}: no vertices")
    try:
        return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def write_ply(cloud: PointCloud, path):
    tagged = cloud.source_panel is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if tagged:
        header.append("comment panel tag follows the coordinates")
        header.append("property string panel")
    header.append("end_header")
    rows = []
    for i, p in enumerate(cloud.points):
        row = " ".join(FLOAT_FMT % c for c in p)
        if tagged:
            row += " " + str(cloud.source_panel[i])
        rows.append(row)
    Path(path).write_text("\n".join(header + rows) + "\n")


def read_ply(path) -> PointCloud:
    lines = _read_text(path).splitlines()
    if not lines or lines[0].strip() != "ply":
        raise SchemaError(f"{path}: not a PLY file")
    n_vert, props, body = None, [], None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise SchemaError(f"{path}: only ASCII PLY is supported")
        if tok[:2] == ["element", "vertex"]:
            n_vert = int(tok[2])
        elif tok[0] == "property" and n_vert is not None:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i + 1
            break
    if n_vert is None or body is None:
        raise SchemaError(f"{path}: missing vertex element or end_header")
    for name in ("x", "y", "z"):
        if name not in props:
            raise SchemaError(f"{path}: vertex property {name!r} missing")
    cols = [props.index(c) for c in ("x", "y", "z")]
    rows = [l.split() for l in lines[body:body + n_vert]]
    if len(rows) != n_vert or any(len(r) < len(props) for r in rows):
        raise SchemaError(f"{path}: expected {n_vert} vertex rows of {len(props)} values")
    try:
        pts = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(-1, 3)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    tags = None
    if "panel" in props:
        tags = np.array([r[props.index("panel")] for r in rows], dtype=str)
    return PointCloud(pts, tags)


def write_xyz(cloud: PointCloud, path):
    Path(path).write_text("".join(" ".join(FLOAT_FMT % c for c in p) + "\n" for p in cloud.points))


def read_xyz(path) -> PointCloud:
    rows = []
    for n, line in enumerate(_read_text(path).splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 3:
            raise SchemaError(f"{path}:{n}: expected 3 values")
        try:
            rows.append([float(t) for t in tok])
        except ValueError as exc:
            raise SchemaError(f"{path}:{n}: {exc}") from None
    return PointCloud(np.array(rows).reshape(-1, 3))


def read_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt"):
        return read_xyz(path)
    raise SchemaError(f"{path}: unknown point cloud format {suffix!r}")


def write_cloud(cloud: PointCloud, path):
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        write_ply(cloud, path)
    elif suffix in (".xyz", ".txt"):
        write_xyz(cloud, path)
    else:
        raise SchemaError(f"{path}: unknown point cloud format {suffix!r}")


def volume_paths(path) -> tuple[Path, Path]:
    """``(raw, sidecar)`` for a volume given either file or the bare stem."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".f32raw", ".json") else p
    return stem.with_suffix(".f32raw"), stem.with_suffix(".json")


def write_volume(vol: ReflectivityVolume, path):
    raw, side = volume_paths(path)
    raw.write_bytes(np.asarray(vol.values, dtype="<f4").tobytes(order="F"))
    side.write_text(json.dumps({
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "depth_axis": vol.depth_axis,
        "panel_pose": vol.panel_pose.to_dict(),
        "panel_id": vol.panel_id,
    }, indent=2, sort_keys=True) + "\n")


def read_volume(path) -> ReflectivityVolume:
    raw, side = volume_paths(path)
    if not side.exists():
        raise SchemaError(f"{side}: volume sidecar JSON not found")
    if not raw.exists():
        raise SchemaError(f"{raw}: volume data not found")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{side}: invalid JSON ({exc.msg})") from None
    for key in ("dims", "spacing", "origin", "depth_axis"):
        if key not in meta:
            raise SchemaError(f"{side}: missing field {key!r}")
    dims = tuple(int(d) for d in meta["dims"])
    data = np.frombuffer(raw.read_bytes(), dtype="<f4")
    if len(dims) != 3 or data.size != int(np.prod(dims)):
        raise SchemaError(f"{raw}: expected {int(np.prod(dims))} float32 values, found {data.size}")
    values = data.reshape(dims, order="F").astype(np.float64)
    try:
        pose = RigidTransform.from_dict(meta["panel_pose"]) if meta.get("panel_pose") else None
        return ReflectivityVolume(values, meta["spacing"], meta["origin"], int(meta["depth_axis"]),
                                  pose, str(meta.get("panel_id", raw.stem)))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{side}: {exc}") from None
