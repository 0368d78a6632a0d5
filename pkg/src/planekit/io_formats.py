"""On-disk formats: PNG depth/label maps, planes and intrinsics JSON,
ASCII PLY / OBJ meshes with semantic labels, and trajectory files.

All writes are atomic (temp file + rename) and byte-reproducible.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadFormat, OutOfRange, SchemaError
from .geometry import CameraIntrinsics, DepthMap, Frame, Plane, Pose
from .gt_pipeline import SemanticMesh
from .losses import PlaneSet
from .masks import LabelMap

DEPTH_SCALE = 1000.0       # millimeters per unit
DEPTH_MAX_M = 65.535
LABEL_UNLABELED = 255


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_image(img: Image.Image, path, **kwargs) -> None:
    import io
    buf = io.BytesIO()
    img.save(buf, format="PNG", **kwargs)
    atomic_write_bytes(path, buf.getvalue())


def write_depth_png(path, depth: DepthMap) -> None:
    """16-bit grayscale PNG, value = round(meters * 1000), 0 = invalid."""
    vals = depth.values
    if np.any(vals[depth.valid] > DEPTH_MAX_M):
        raise OutOfRange(f"depth exceeds {DEPTH_MAX_M} m")
    mm = np.round(vals * DEPTH_SCALE).astype(np.uint16)
    mm[~depth.valid] = 0
    # round-to-invalid guard: a valid sub-millimeter depth must not collapse to 0
    mm[depth.valid & (mm == 0)] = 1
    _atomic_save_image(Image.fromarray(mm), path)


def read_depth_png(path) -> DepthMap:
    try:
        img = Image.open(path)
    except Exception as exc:
        raise BadFormat(f"cannot open {path}: {exc}") from exc
    if img.mode not in ("I;16", "I"):
        raise BadFormat(f"expected 16-bit grayscale PNG, got mode {img.mode}")
    mm = np.asarray(img, dtype=np.uint16)
    valid = mm > 0
    return DepthMap(np.where(valid, mm / DEPTH_SCALE, 0.0), valid)


def write_label_png(path, labels: LabelMap) -> None:
    """8-bit PNG with plane ids 0..K-1 and 255 for non-planar pixels."""
    if labels.num_planes > 254:
        raise OutOfRange("too many planes for 8-bit labels")
    out = labels.labels.astype(np.uint8)
    out[labels.labels == labels.num_planes] = LABEL_UNLABELED
    _atomic_save_image(Image.fromarray(out, mode="L"), path)


def read_label_png(path, num_planes: int) -> LabelMap:
    try:
        img = Image.open(path)
    except Exception as exc:
        raise BadFormat(f"cannot open {path}: {exc}") from exc
    if img.mode != "L":
        raise BadFormat(f"expected 8-bit grayscale PNG, got mode {img.mode}")
    raw = np.asarray(img, dtype=np.int32)
    labels = np.where(raw == LABEL_UNLABELED, num_planes, raw)
    return LabelMap(labels, num_planes)


def write_intensity_png(path, intensity: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(intensity)), 0, 255).astype(np.uint8)
    _atomic_save_image(Image.fromarray(arr, mode="L"), path)


def read_intensity_png(path) -> np.ndarray:
    img = Image.open(path)
    return np.asarray(img.convert("L"), dtype=float)


def dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=1) + "\n").encode()


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dump_json(obj))


def planes_to_json(planes: PlaneSet) -> dict:
    return {"planes": [{"param": [float(x) for x in p.param]} for p in planes.planes],
            "k_capacity": planes.capacity,
            "frame": "camera"}


def planes_from_json(doc: dict) -> PlaneSet:
    if not isinstance(doc, dict) or "planes" not in doc:
        raise SchemaError("missing 'planes' key")
    raw = doc["planes"]
    if not isinstance(raw, list) or not raw:
        raise SchemaError("'planes' must be a non-empty list")
    try:
        planes = [Plane(np.array(e["param"], dtype=float)) for e in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad plane entry: {exc}") from exc
    capacity = doc.get("k_capacity", max(10, len(planes)))
    if not isinstance(capacity, int) or capacity < len(planes):
        raise SchemaError("k_capacity must be an int >= plane count")
    return PlaneSet(planes, capacity)


def write_planes_json(path, planes: PlaneSet) -> None:
    write_json(path, planes_to_json(planes))


def read_planes_json(path) -> PlaneSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in {path}: {exc}") from exc
    return planes_from_json(doc)


def intrinsics_to_json(intr: CameraIntrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def intrinsics_from_json(doc: dict) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(fx=float(doc["fx"]), fy=float(doc["fy"]),
                                cx=float(doc["cx"]), cy=float(doc["cy"]),
                                width=int(doc["width"]), height=int(doc["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad intrinsics: {exc}") from exc


def write_intrinsics_json(path, intr: CameraIntrinsics) -> None:
    write_json(path, intrinsics_to_json(intr))


def read_intrinsics_json(path) -> CameraIntrinsics:
    return intrinsics_from_json(json.loads(Path(path).read_text()))


def read_trajectory_json(path) -> list[Frame]:
    """JSON list of {intrinsics, rotation (row-major 9), translation (3)}."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise SchemaError("trajectory must be a JSON list")
    frames = []
    for entry in doc:
        intr = intrinsics_from_json(entry["intrinsics"])
        R = np.array(entry["rotation"], dtype=float).reshape(3, 3)
        t = np.array(entry["translation"], dtype=float)
        frames.append(Frame(intr, Pose(R, t)))
    return frames


def write_trajectory_json(path, frames: list[Frame]) -> None:
    doc = [{"intrinsics": intrinsics_to_json(f.intrinsics),
            "rotation": [float(x) for x in f.pose.rotation.ravel()],
            "translation": [float(x) for x in f.pose.translation]}
           for f in frames]
    write_json(path, doc)


def write_ply(path, mesh: SemanticMesh) -> None:
    """ASCII PLY with a per-vertex integer 'label' property."""
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(mesh.vertices)}",
             "property double x", "property double y", "property double z",
             "property int label",
             f"element face {len(mesh.triangles)}",
             "property list uchar int vertex_indices",
             "end_header"]
    for v, lab in zip(mesh.vertices, mesh.vertex_labels):
        lines.append(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r} {int(lab)}")
    for t in mesh.triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_ply(path) -> SemanticMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise BadFormat("not a PLY file")
    n_vert = n_face = None
    vert_props: list[str] = []
    i = 1
    current = None
    while i < len(text):
        tok = text[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise BadFormat("only ASCII PLY is supported")
        elif tok[0] == "element":
            current = tok[1]
            if tok[1] == "vertex":
                n_vert = int(tok[2])
            elif tok[1] == "face":
                n_face = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            vert_props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    if n_vert is None or n_face is None:
        raise BadFormat("PLY header missing vertex or face element")
    for need in ("x", "y", "z", "label"):
        if need not in vert_props:
            raise BadFormat(f"PLY vertex property {need!r} missing")
    ix, iy, iz = (vert_props.index(k) for k in ("x", "y", "z"))
    il = vert_props.index("label")
    verts = np.empty((n_vert, 3))
    labels = np.empty(n_vert, dtype=np.int64)
    for k in range(n_vert):
        tok = text[i + k].split()
        verts[k] = (float(tok[ix]), float(tok[iy]), float(tok[iz]))
        labels[k] = int(tok[il])
    i += n_vert
    tris = np.empty((n_face, 3), dtype=np.int64)
    for k in range(n_face):
        tok = text[i + k].split()
        if int(tok[0]) != 3:
            raise BadFormat("only triangle faces are supported")
        tris[k] = (int(tok[1]), int(tok[2]), int(tok[3]))
    return SemanticMesh(verts, tris, labels)


def read_obj(path, labels_path) -> SemanticMesh:
    """Wavefront OBJ plus a sidecar text file with one integer label per vertex."""
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
            if len(idx) != 3:
                raise BadFormat("only triangle faces are supported")
            tris.append(idx)
    labels = np.array([int(x) for x in Path(labels_path).read_text().split()],
                      dtype=np.int64)
    if len(labels) != len(verts):
        raise BadFormat("sidecar label count does not match vertex count")
    return SemanticMesh(np.array(verts), np.array(tris, dtype=np.int64), labels)
