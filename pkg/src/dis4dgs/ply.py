"""Scene and camera file I/O.

Scenes are stored as binary little-endian PLY, one "vertex" element per
Gaussian with float32 properties in a fixed order (15 geometry+motion floats,
then opacity and SH coefficients). A second writer emits the 16-float
slicing-first layout (4D mean, 4D log scales, double-quaternion rotation)
used by the storage comparison. Cameras are plain JSON files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scene import CameraModel, GaussianCloud, Scene4D, SceneError, num_sh_coeffs

FORMAT_COMMENT = "format dis4dgs 1"
FORMAT_COMMENT_FULL = "format slicing4dgs 1"


class PlyParseError(SceneError):
    """Structured parse failure for scene files."""


def _geometry_properties() -> list[str]:
    return (["x", "y", "z", "t"]
            + [f"scale_{i}" for i in range(3)] + ["scale_t"]
            + [f"rot_{i}" for i in range(4)]
            + [f"vel_{i}" for i in range(3)])


def scene_properties(sh_degree: int) -> list[str]:
    n_rest = 3 * (num_sh_coeffs(sh_degree) - 1)
    return (_geometry_properties() + ["opacity"]
            + [f"f_dc_{i}" for i in range(3)]
            + [f"f_rest_{i}" for i in range(n_rest)])


def full16_properties(sh_degree: int) -> list[str]:
    n_rest = 3 * (num_sh_coeffs(sh_degree) - 1)
    return (["x", "y", "z", "t"]
            + [f"scale_{i}" for i in range(4)]
            + [f"rot_l_{i}" for i in range(4)]
            + [f"rot_r_{i}" for i in range(4)]
            + ["opacity"]
            + [f"f_dc_{i}" for i in range(3)]
            + [f"f_rest_{i}" for i in range(n_rest)])


def _write_ply(path, n: int, props: list[str], comments: list[str],
               payload: np.ndarray) -> None:
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {n}")
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def save_scene(scene: Scene4D, path) -> None:
    g = scene.gaussians
    n = len(g)
    k = g.sh_coeffs.shape[1]
    cols = [g.mu4d[:, :3], g.mu4d[:, 3:4],
            g.log_s4d[:, :3], g.log_s4d[:, 3:4],
            g.q, g.vel3d, g.opacity_logit[:, None],
            g.sh_coeffs[:, 0, :], g.sh_coeffs[:, 1:, :].reshape(n, 3 * (k - 1))]
    payload = np.concatenate(cols, axis=1)
    bg = [float(v) for v in scene.background]
    comments = [FORMAT_COMMENT,
                f"duration_seconds {float(scene.duration_seconds)!r}",
                f"background {bg[0]!r} {bg[1]!r} {bg[2]!r}"]
    _write_ply(path, n, scene_properties(scene.sh_degree), comments, payload)


def save_scene_full16(scene: Scene4D, path) -> None:
    """Serialize in the slicing-first 16-float geometry+motion layout."""
    from .scene import activate
    from .slicing import full_parameterization
    act = activate(scene.gaussians.astype(np.float64))
    mu4d, log_scales, rot_l, rot_r = full_parameterization(act)
    g = scene.gaussians
    n = len(g)
    k = g.sh_coeffs.shape[1]
    cols = [mu4d, log_scales, rot_l, rot_r, g.opacity_logit[:, None],
            g.sh_coeffs[:, 0, :], g.sh_coeffs[:, 1:, :].reshape(n, 3 * (k - 1))]
    payload = np.concatenate(cols, axis=1)
    bg = [float(v) for v in scene.background]
    comments = [FORMAT_COMMENT_FULL,
                f"duration_seconds {float(scene.duration_seconds)!r}",
                f"background {bg[0]!r} {bg[1]!r} {bg[2]!r}"]
    _write_ply(path, n, full16_properties(scene.sh_degree), comments, payload)


def _read_header(f, path):
    lines = []
    while True:
        line = f.readline()
        if not line:
            raise PlyParseError(f"{path}: truncated header (no end_header)")
        text = line.decode("ascii", errors="replace").strip()
        lines.append(text)
        if text == "end_header":
            break
        if len(lines) > 4096:
            raise PlyParseError(f"{path}: header too large")
    return lines


def load_scene(path) -> Scene4D:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        lines = _read_header(f, path)
        blob = f.read()

    if not lines or lines[0] != "ply":
        raise PlyParseError(f"{path}: not a PLY file (missing 'ply' magic)")
    if "format binary_little_endian 1.0" not in lines:
        raise PlyParseError(f"{path}: expected binary_little_endian format")

    comments = [l[len("comment "):] for l in lines if l.startswith("comment ")]
    if FORMAT_COMMENT not in comments:
        raise PlyParseError(f"{path}: missing '{FORMAT_COMMENT}' comment")
    duration = 1.0
    background = np.zeros(3)
    for c in comments:
        if c.startswith("duration_seconds "):
            duration = float(c.split()[1])
        elif c.startswith("background "):
            background = np.array([float(v) for v in c.split()[1:4]])

    n = None
    props = []
    for l in lines:
        if l.startswith("element vertex "):
            n = int(l.split()[2])
        elif l.startswith("element "):
            raise PlyParseError(f"{path}: unexpected element '{l.split()[1]}'")
        elif l.startswith("property "):
            parts = l.split()
            if parts[1] != "float":
                raise PlyParseError(f"{path}: property {parts[-1]} is {parts[1]}, expected float")
            props.append(parts[2])
    if n is None:
        raise PlyParseError(f"{path}: missing 'element vertex' line")

    # infer the SH degree from the f_rest count, then demand the exact schema
    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyParseError(f"{path}: f_rest property count {n_rest} not divisible by 3")
    k = n_rest // 3 + 1
    try:
        from .scene import sh_degree_from_coeffs
        degree = sh_degree_from_coeffs(k)
    except SceneError as e:
        raise PlyParseError(f"{path}: {e}") from None
    expected = scene_properties(degree)
    if props != expected:
        missing = [p for p in expected if p not in props]
        if missing:
            raise PlyParseError(f"{path}: missing property '{missing[0]}'")
        extra = [p for p in props if p not in expected]
        if extra:
            raise PlyParseError(f"{path}: unexpected property '{extra[0]}'")
        raise PlyParseError(f"{path}: property order differs from the schema")

    n_props = len(props)
    want = n * n_props * 4
    if len(blob) < want:
        raise PlyParseError(f"{path}: payload has {len(blob)} bytes, expected {want}")
    data = np.frombuffer(blob[:want], dtype="<f4").reshape(n, n_props)

    bad = ~np.isfinite(data)
    if bad.any():
        el = int(np.argwhere(bad.any(axis=1))[0][0])
        raise PlyParseError(f"{path}: non-finite value at element {el}")

    mu4d = data[:, 0:4].copy()
    log_s4d = data[:, 4:8].copy()
    q = data[:, 8:12].copy()
    vel3d = data[:, 12:15].copy()
    opacity = data[:, 15].copy()
    f_dc = data[:, 16:19]
    f_rest = data[:, 19:19 + n_rest]
    sh = np.concatenate([f_dc[:, None, :], f_rest.reshape(n, k - 1, 3)], axis=1).copy()
    cloud = GaussianCloud(mu4d=mu4d, log_s4d=log_s4d, q=q, vel3d=vel3d,
                          opacity_logit=opacity, sh_coeffs=sh)
    return Scene4D(cloud, duration_seconds=duration, background=background)


def save_points(points: np.ndarray, colors: np.ndarray, path) -> None:
    """Plain xyz+rgb point cloud (training initialization input)."""
    n = points.shape[0]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in ("x", "y", "z")]
    header += [f"property uchar {p}" for p in ("red", "green", "blue")]
    header.append("end_header")
    rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
    rec["xyz"] = points
    rec["rgb"] = np.clip(np.round(np.asarray(colors) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def load_points(path):
    path = Path(path)
    with open(path, "rb") as f:
        lines = _read_header(f, path)
        blob = f.read()
    n = None
    for l in lines:
        if l.startswith("element vertex "):
            n = int(l.split()[2])
    if n is None:
        raise PlyParseError(f"{path}: missing 'element vertex' line")
    rec = np.frombuffer(blob, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)], count=n)
    return rec["xyz"].astype(np.float64), rec["rgb"].astype(np.float64) / 255.0


def camera_to_dict(cam: CameraModel) -> dict:
    out = {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
           "width": cam.width, "height": cam.height,
           "rot_w2c": [float(v) for v in cam.rot_w2c.reshape(9)],
           "trans_w2c": [float(v) for v in cam.trans_w2c]}
    if cam.time is not None:
        out["time"] = cam.time
    return out


def camera_from_dict(d: dict, path="<camera>") -> CameraModel:
    required = ["fx", "fy", "cx", "cy", "width", "height", "rot_w2c", "trans_w2c"]
    for key in required:
        if key not in d:
            raise PlyParseError(f"{path}: camera JSON missing key '{key}'")
    rot = np.asarray(d["rot_w2c"], dtype=np.float64)
    if rot.size != 9:
        raise PlyParseError(f"{path}: rot_w2c must have 9 numbers, got {rot.size}")
    return CameraModel(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["width"]), height=int(d["height"]),
        rot_w2c=rot.reshape(3, 3), trans_w2c=np.asarray(d["trans_w2c"], dtype=np.float64),
        near=float(d.get("near", 0.01)),
        time=float(d["time"]) if "time" in d else None)


def save_camera(cam: CameraModel, path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=1))


def load_camera(path) -> CameraModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise PlyParseError(f"{path}: invalid JSON ({e})") from None
    return camera_from_dict(d, path)


def load_cameras(path) -> list[CameraModel]:
    """A camera file may hold one camera object or a list of them."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise PlyParseError(f"{path}: invalid JSON ({e})") from None
    if isinstance(d, dict):
        return [camera_from_dict(d, path)]
    return [camera_from_dict(item, f"{path}[{i}]") for i, item in enumerate(d)]
