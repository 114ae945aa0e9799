"""File formats and persistence: the FMAP map container, scene manifests,
prediction bundles, and CSV/SVG report emission.

All writes are whole-file atomic (temp file in the target directory, then
rename), and every format round-trips bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraIntrinsics, RigidTransform
from .synth import RenderedView, StereoSample

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
DTYPE_FLOAT32 = 1
DTYPE_UINT16 = 2
_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4"), DTYPE_UINT16: np.dtype("<u2")}


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_fmap(path, array: np.ndarray, dtype_code: int | None = None) -> None:
    """Write a dense map as an FMAP file.

    Layout: magic "FMAP", then little-endian u32 version, dtype code
    (1 = float32, 2 = uint16), height, width, channels, then the row-major
    little-endian payload. Float arrays default to float32 payloads and
    integer arrays to uint16.
    """
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[..., None]
    if array.ndim != 3:
        raise InvalidInputError("FMAP stores (H, W) or (H, W, C) arrays")
    if dtype_code is None:
        dtype_code = DTYPE_UINT16 if np.issubdtype(array.dtype, np.integer) \
            else DTYPE_FLOAT32
    if dtype_code not in _DTYPES:
        raise InvalidInputError(f"unknown FMAP dtype code {dtype_code}")
    h, w, c = array.shape
    header = FMAP_MAGIC + struct.pack("<5I", FMAP_VERSION, dtype_code, h, w, c)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[dtype_code]).tobytes()
    _atomic_write(Path(path), header + payload)


def read_fmap(path) -> np.ndarray:
    """Read an FMAP file; single-channel maps come back as (H, W)."""
    raw = Path(path).read_bytes()
    if raw[:4] != FMAP_MAGIC:
        raise InvalidInputError(f"{path}: not an FMAP file")
    version, dtype_code, h, w, c = struct.unpack("<5I", raw[4:24])
    if version != FMAP_VERSION:
        raise InvalidInputError(f"{path}: unsupported FMAP version {version}")
    if dtype_code not in _DTYPES:
        raise InvalidInputError(f"{path}: unknown dtype code {dtype_code}")
    dtype = _DTYPES[dtype_code]
    expected = h * w * c * dtype.itemsize
    payload = raw[24:]
    if len(payload) != expected:
        raise InvalidInputError(f"{path}: payload is {len(payload)} bytes, "
                                f"expected {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(h, w, c)
    return array[..., 0] if c == 1 else array


def _dump_json(path: Path, doc: dict) -> None:
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True).encode() + b"\n")


def _camera_doc(cam: CameraIntrinsics) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height}


def _camera_from_doc(doc: dict) -> CameraIntrinsics:
    return CameraIntrinsics(fx=doc["fx"], fy=doc["fy"], cx=doc["cx"],
                            cy=doc["cy"], width=doc["width"], height=doc["height"])


def _matrix_list(t: RigidTransform) -> list[float]:
    return [float(x) for x in t.as_matrix().reshape(-1)]


def _transform_from_list(values) -> RigidTransform:
    m = np.asarray(values, dtype=np.float64)
    if m.size != 16:
        raise InvalidInputError("pose must hold 16 numbers (row-major 4x4)")
    return RigidTransform.from_matrix(m.reshape(4, 4))


def write_view(out_dir, stem: str, view: RenderedView,
               neighbour_stem: str | None = None,
               t_sn: RigidTransform | None = None,
               dropped_instances: list[int] | None = None,
               scene: dict | None = None) -> Path:
    """Write a rendered view as a manifest plus four FMAP files.

    Pair linkage (neighbour manifest name and the source-to-neighbour
    transform), the list of GT instances dropped from this view, and the
    generating scene parameters are recorded when given. Returns the
    manifest path.
    """
    out_dir = Path(out_dir)
    files = {
        "rgb": f"{stem}.rgb.fmap",
        "depth": f"{stem}.depth.fmap",
        "instances": f"{stem}.instances.fmap",
        "planes": f"{stem}.planes.fmap",
    }
    write_fmap(out_dir / files["rgb"], view.rgb.astype(np.float32))
    write_fmap(out_dir / files["depth"], view.depth.astype(np.float32))
    write_fmap(out_dir / files["instances"], view.instances.astype(np.uint16))
    write_fmap(out_dir / files["planes"], view.plane_map.astype(np.float32))
    doc = {
        "camera": _camera_doc(view.camera),
        "pose": _matrix_list(view.pose),
        "files": files,
        "classes": {str(k): v for k, v in sorted(view.classes.items())},
    }
    if neighbour_stem is not None:
        if t_sn is None:
            raise InvalidInputError("pair linkage needs the source-to-neighbour transform")
        doc["pair"] = {"neighbour": f"{neighbour_stem}.json",
                       "t_sn": _matrix_list(t_sn)}
    if dropped_instances:
        doc["dropped_instances"] = sorted(int(i) for i in dropped_instances)
    if scene is not None:
        doc["scene"] = scene
    manifest = out_dir / f"{stem}.json"
    _dump_json(manifest, doc)
    return manifest


def read_view(manifest_path) -> tuple[RenderedView, dict]:
    """Load a view manifest; returns (view, manifest document)."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{manifest_path}: cannot parse manifest: {exc}")
    cam = _camera_from_doc(doc["camera"])
    pose = _transform_from_list(doc["pose"])
    base = manifest_path.parent
    files = doc["files"]
    for name in ("rgb", "depth", "instances", "planes"):
        if not (base / files[name]).exists():
            raise InvalidInputError(f"{manifest_path}: missing map file {files[name]}")
    view = RenderedView(
        camera=cam, pose=pose,
        rgb=read_fmap(base / files["rgb"]).astype(np.float64),
        depth=read_fmap(base / files["depth"]).astype(np.float64),
        instances=read_fmap(base / files["instances"]).astype(np.int32),
        plane_map=read_fmap(base / files["planes"]).astype(np.float64),
        classes={int(k): int(v) for k, v in doc["classes"].items()})
    return view, doc


def read_pair(manifest_path) -> tuple[StereoSample, dict]:
    """Load a source manifest with pair linkage into a StereoSample."""
    source, doc = read_view(manifest_path)
    if "pair" not in doc:
        raise InvalidInputError(f"{manifest_path}: manifest has no pair linkage")
    nbr_path = Path(manifest_path).parent / doc["pair"]["neighbour"]
    neighbour, _ = read_view(nbr_path)
    t_sn = _transform_from_list(doc["pair"]["t_sn"])
    return StereoSample(source=source, neighbour=neighbour,
                        t_ns=t_sn.inverse(), t_sn=t_sn), doc


def write_prediction(out_dir, stem: str, per_pixel_planes: np.ndarray,
                     instances: list[dict]) -> Path:
    """Write a prediction bundle for one image.

    ``instances`` entries carry score, class_id, and a (H, W) soft mask in
    [0, 1]; masks go to FMAP files next to the JSON index.
    """
    out_dir = Path(out_dir)
    planes_file = f"{stem}.pred_planes.fmap"
    write_fmap(out_dir / planes_file, per_pixel_planes.astype(np.float32))
    entries = []
    for k, inst in enumerate(instances):
        mask_file = f"{stem}.pred_mask{k:03d}.fmap"
        write_fmap(out_dir / mask_file, np.asarray(inst["soft_mask"], dtype=np.float32))
        entries.append({"score": float(inst["score"]),
                        "class_id": int(inst["class_id"]),
                        "mask": mask_file})
    path = out_dir / f"{stem}.pred.json"
    _dump_json(path, {"per_pixel_planes": planes_file, "instances": entries})
    return path


def read_prediction(pred_path) -> tuple[np.ndarray, list[dict]]:
    """Load a prediction bundle: (per-pixel planes, instance entries)."""
    pred_path = Path(pred_path)
    try:
        doc = json.loads(pred_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{pred_path}: cannot parse prediction: {exc}")
    base = pred_path.parent
    planes = read_fmap(base / doc["per_pixel_planes"]).astype(np.float64)
    instances = []
    for entry in doc["instances"]:
        instances.append({
            "score": float(entry["score"]),
            "class_id": int(entry["class_id"]),
            "soft_mask": read_fmap(base / entry["mask"]).astype(np.float64),
        })
    return planes, instances


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Deterministic CSV emission; floats use repr for exact round-trips."""
    def cell(x):
        if isinstance(x, float):
            return repr(x)
        return str(x)
    lines = [",".join(header)]
    lines += [",".join(cell(x) for x in row) for row in rows]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def write_recall_svg(path, curves: dict[str, tuple[np.ndarray, np.ndarray]],
                     width: int = 640, height: int = 420) -> None:
    """Recall-vs-threshold plot with one polyline per model."""
    pad = 50
    xs_max = max(float(np.max(t)) for t, _ in curves.values()) or 1.0
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def sx(x):
        return pad + x / xs_max * (width - 2 * pad)

    def sy(y):
        return height - pad - y * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">depth threshold (m)</text>',
        f'<text x="14" y="{height // 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {height // 2})">per-pixel recall</text>',
    ]
    for k in range(5):
        frac = k / 4.0
        parts.append(f'<text x="{pad - 6:.1f}" y="{sy(frac) + 4:.1f}" '
                     f'text-anchor="end" font-size="11">{frac:.2f}</text>')
        parts.append(f'<text x="{sx(frac * xs_max):.1f}" y="{height - pad + 16}" '
                     f'text-anchor="middle" font-size="11">{frac * xs_max:.2f}</text>')
    for i, (label, (taus, recall)) in enumerate(sorted(curves.items())):
        color = colors[i % len(colors)]
        pts = " ".join(f"{sx(float(t)):.2f},{sy(float(r)):.2f}"
                       for t, r in zip(taus, recall))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 16 * (i + 1)}" '
                     f'text-anchor="end" font-size="12" fill="{color}">{label}</text>')
    parts.append("</svg>")
    _atomic_write(Path(path), "\n".join(parts).encode() + b"\n")
