"""Readers and writers for every on-disk format the package exchanges."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, Pose, ViewSample

DRF_MAGIC = b"DRF1"


class FormatError(ValueError):
    """Raised for unparseable input files."""


# ----------------------------------------------------------------------------
# cameras


def camera_to_dict(intrinsics: CameraIntrinsics, pose: Pose) -> dict:
    return {
        "fx": float(intrinsics.fx), "fy": float(intrinsics.fy),
        "cx": float(intrinsics.cx), "cy": float(intrinsics.cy),
        "width": int(intrinsics.width), "height": int(intrinsics.height),
        "rotation": [float(x) for x in pose.rotation.ravel()],
        "translation": [float(x) for x in pose.translation],
    }


def camera_from_dict(d: dict):
    try:
        intr = CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]))
        pose = Pose(np.array(d["rotation"], float).reshape(3, 3), np.array(d["translation"], float))
    except KeyError as exc:
        raise FormatError(f"camera is missing field {exc}") from None
    return intr, pose


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def save_camera(path, intrinsics, pose) -> None:
    save_json(path, camera_to_dict(intrinsics, pose))


def load_camera(path):
    return camera_from_dict(load_json(path))


def save_poses(path, poses) -> None:
    save_json(path, {"poses": [{"rotation": [float(x) for x in p.rotation.ravel()],
                                "translation": [float(x) for x in p.translation]} for p in poses]})


def load_poses(path) -> list:
    data = load_json(path)
    items = data["poses"] if isinstance(data, dict) else data
    return [Pose(np.array(p["rotation"], float).reshape(3, 3), np.array(p["translation"], float)) for p in items]


# ----------------------------------------------------------------------------
# depth


def save_depth(path, depth: np.ndarray) -> None:
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(DRF_MAGIC + f" {w} {h}\n".encode())
        fh.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    parts = raw[:nl].split() if nl >= 0 else []
    if len(parts) != 3 or parts[0] != DRF_MAGIC:
        raise FormatError(f"{path}: not a DRF1 depth file")
    w, h = int(parts[1]), int(parts[2])
    body = raw[nl + 1 :]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


# ----------------------------------------------------------------------------
# images


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    """Write an RGB float image as PNG or binary PPM (by extension)."""
    path = Path(path)
    data = to_uint8(image)
    if path.suffix.lower() == ".ppm":
        h, w = data.shape[:2]
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())
    else:
        Image.fromarray(data, "RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot read image ({exc})") from None


def save_mask16(path, mask: np.ndarray) -> None:
    """16-bit single-channel PNG (labels, instance ids, boolean masks)."""
    Image.fromarray(np.asarray(mask).astype(np.uint16)).save(path, format="PNG")


def load_mask16(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int64)


# ----------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "float32": "f4", "float": "f4", "float64": "f8", "double": "f8",
    "uint8": "u1", "uchar": "u1", "int8": "i1", "char": "i1",
    "uint16": "u2", "ushort": "u2", "int16": "i2", "short": "i2",
    "uint32": "u4", "uint": "u4", "int32": "i4", "int": "i4",
}
_PLY_NAMES = {"f4": "float32", "f8": "float64", "u1": "uint8", "i1": "int8", "u2": "uint16",
              "i2": "int16", "u4": "uint32", "i4": "int32"}


def write_ply(path, columns: dict, binary: bool = True) -> None:
    """Write a vertex-only PLY.

    Args:
        columns: ordered mapping of property name to ``(array, dtype)`` where
            dtype is a numpy type code such as ``"f4"`` or ``"u2"``.
    """
    names = list(columns)
    n = len(next(iter(columns.values()))[0]) if names else 0
    dtype = np.dtype([(k, "<" + columns[k][1]) for k in names])
    rec = np.empty(n, dtype=dtype)
    for k in names:
        rec[k] = columns[k][0]
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property {_PLY_NAMES[columns[k][1]]} {k}" for k in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(_ascii_value(row[k]) for k in names) + "\n").encode())


def _ascii_value(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(np.float32(v))) if v.dtype == np.float32 else repr(float(v))
    return str(int(v))


def read_ply(path) -> dict:
    """Read the vertex element of an ASCII or binary little-endian PLY into arrays."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = raw.find(b"\n", end) + 1
    header = raw[:end].decode("ascii").splitlines()
    fmt, n, props, in_vertex = None, 0, [], False
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n = int(tok[2])
            elif props:
                break
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError(f"{path}: list properties on vertices are not supported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    dtype = np.dtype([(name, "<" + t) for name, t in props])
    if fmt == "binary_little_endian":
        rec = np.frombuffer(raw[body_start : body_start + n * dtype.itemsize], dtype=dtype)
    elif fmt == "ascii":
        lines = raw[body_start:].decode("ascii").split("\n")[:n]
        table = np.array([ln.split() for ln in lines], dtype=float).reshape(n, len(props))
        rec = np.empty(n, dtype=dtype)
        for i, (name, _) in enumerate(props):
            rec[name] = table[:, i]
    else:
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return {name: np.array(rec[name]) for name, _ in props}


def save_cloud(path, points, colors=None, class_ids=None, binary=True) -> None:
    cols = {"x": (points[:, 0], "f4"), "y": (points[:, 1], "f4"), "z": (points[:, 2], "f4")}
    if colors is not None:
        c8 = np.round(np.clip(colors, 0, 1) * 255)
        cols.update(red=(c8[:, 0], "u1"), green=(c8[:, 1], "u1"), blue=(c8[:, 2], "u1"))
    if class_ids is not None:
        cols["class_id"] = (class_ids, "u2")
    write_ply(path, cols, binary)


def load_cloud(path):
    """``(points, colors or None, class_ids or None)`` from a PLY point cloud."""
    d = read_ply(path)
    pts = np.column_stack([d["x"], d["y"], d["z"]]).astype(float)
    colors = None
    if all(k in d for k in ("red", "green", "blue")):
        colors = np.column_stack([d["red"], d["green"], d["blue"]]).astype(float) / 255.0
    cls = d["class_id"].astype(np.int64) if "class_id" in d else None
    return pts, colors, cls


# ----------------------------------------------------------------------------
# trajectories and lanes

TRAJ_HEADER = ["frame_id", "agent_id", "class", "x", "y", "heading", "vx", "vy"]


def write_trajectories(path, rows, dt: float) -> None:
    """Write trajectory rows (tuples in header order) plus the ``{"dt": ...}`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRAJ_HEADER)
        for r in rows:
            wr.writerow([int(r[0]), int(r[1]), r[2]] + [repr(float(x)) for x in r[3:]])
    save_json(sidecar_path(path), {"dt": float(dt)})


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_trajectories(path):
    """Parse a trajectory CSV.

    Returns:
        ``(rows, dt)`` where rows are dicts keyed by the header fields and
        ``dt`` comes from the sidecar JSON (None when absent).
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or [h.strip() for h in header] != TRAJ_HEADER:
            raise FormatError(f"{path}:1: expected header {','.join(TRAJ_HEADER)}")
        for lineno, rec in enumerate(rd, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(TRAJ_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(TRAJ_HEADER)} fields, got {len(rec)}")
            try:
                rows.append({
                    "frame_id": int(rec[0]), "agent_id": int(rec[1]), "class": rec[2].strip(),
                    "x": float(rec[3]), "y": float(rec[4]), "heading": float(rec[5]),
                    "vx": float(rec[6]), "vy": float(rec[7]),
                })
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    side = sidecar_path(path)
    dt = float(load_json(side)["dt"]) if side.exists() else None
    return rows, dt


# ----------------------------------------------------------------------------
# datasets


def load_manifest(path) -> dict:
    """Load a dataset manifest, resolving file paths relative to it.

    Format::

        {"views": [{"image": ..., "depth": ..., "labels": ..., "camera": ...}],
         "cloud": ..., "lanes": ..., "bank": ...}
    """
    path = Path(path)
    data = load_json(path)
    base = path.parent
    out = dict(data)
    views = []
    for i, v in enumerate(data.get("views", [])):
        entry = {}
        for key in ("image", "depth", "labels", "camera"):
            if key not in v:
                raise FormatError(f"{path}: view {i} lacks {key!r}")
            p = base / v[key]
            if not p.exists():
                raise FormatError(f"{path}: view {i} references missing file {p}")
            entry[key] = p
        views.append(entry)
    out["views"] = views
    for key in ("cloud", "lanes", "bank"):
        if data.get(key):
            out[key] = base / data[key]
    return out


def load_view(entry: dict) -> ViewSample:
    intr, pose = load_camera(entry["camera"])
    return ViewSample(load_image(entry["image"]), load_depth(entry["depth"]),
                      load_mask16(entry["labels"]), intr, pose)


def load_dataset(path) -> list:
    man = load_manifest(path)
    views = [load_view(v) for v in man["views"]]
    shapes = {v.intrinsics.shape for v in views}
    if len(shapes) > 1:
        raise FormatError(f"{path}: views have differing raster sizes {sorted(shapes)}")
    return views


def save_view(directory, name: str, view: ViewSample) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entry = {"image": f"{name}.png", "depth": f"{name}.drf", "labels": f"{name}_labels.png",
             "camera": f"{name}.json"}
    save_image(d / entry["image"], view.image)
    save_depth(d / entry["depth"], view.depth)
    save_mask16(d / entry["labels"], view.labels)
    save_camera(d / entry["camera"], view.intrinsics, view.pose)
    return entry
