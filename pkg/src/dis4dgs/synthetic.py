"""Procedural ground-truth scenes and datasets.

Scenes are analytic Gaussian clouds with known motion; target images for
training and comparison runs are always rendered by the float64 slicing-first
pipeline so the tests are grounded in the reference route, not the engine
under test.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .projection import RenderOptions
from .scene import CameraModel, GaussianCloud, Scene4D, logit
from .slicing import render_slicing_first
from . import imgio, ply
from .sh import rgb_to_sh_dc

RECIPES = ("orbiting-blobs", "moving-edge", "abrupt-appearance", "random-cloud")


@dataclass
class SceneRecipe:
    recipe: str
    seed: int = 0
    n_cameras: int = 8
    n_timesteps: int = 20
    resolution: int = 64

    def __post_init__(self):
        base = re.sub(r"-\d+$", "", self.recipe)
        if base not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; expected one of "
                             f"{RECIPES} (random-cloud takes an -N suffix)")

    @property
    def cloud_size(self) -> int:
        m = re.search(r"random-cloud-(\d+)$", self.recipe)
        return int(m.group(1)) if m else 0


@dataclass
class Frame:
    camera: CameraModel  # carries the normalized timestamp
    image: np.ndarray    # (H,W,3) linear
    split: str           # train | holdout


def look_at(pos, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation/translation for a camera at pos facing target."""
    pos = np.asarray(pos, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - pos
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return rot, -rot @ pos


def ring_cameras(n: int, resolution: int, radius: float = 3.0,
                 height: float = 0.6, fov_deg: float = 50.0) -> list[CameraModel]:
    cams = []
    f = 0.5 * resolution / np.tan(np.radians(fov_deg) / 2)
    for i in range(n):
        ang = 2 * np.pi * i / n
        pos = np.array([radius * np.sin(ang), height * np.cos(2 * ang),
                        -radius * np.cos(ang)])
        rot, trans = look_at(pos, (0.0, 0.0, 0.0))
        cams.append(CameraModel(fx=f, fy=f, cx=resolution / 2, cy=resolution / 2,
                                width=resolution, height=resolution,
                                rot_w2c=rot, trans_w2c=trans))
    return cams


def _cloud(mu4d, log_s4d, q, vel3d, opacity_logit, colors, sh_degree=0):
    n = len(mu4d)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rgb_to_sh_dc(np.asarray(colors, dtype=np.float64))
    return GaussianCloud(
        mu4d=np.asarray(mu4d, dtype=np.float64),
        log_s4d=np.asarray(log_s4d, dtype=np.float64),
        q=np.asarray(q, dtype=np.float64),
        vel3d=np.asarray(vel3d, dtype=np.float64),
        opacity_logit=np.asarray(opacity_logit, dtype=np.float64),
        sh_coeffs=sh)


def _identity_quats(n):
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def _orbiting_blobs(rng) -> Scene4D:
    """Three colored blobs, each a 2-segment piecewise-linear trajectory."""
    colors3 = np.array([[0.9, 0.2, 0.2], [0.2, 0.85, 0.3], [0.25, 0.35, 0.95]])
    s_t = 0.16
    rows_mu, rows_vel, rows_col = [], [], []
    for b in range(3):
        ang = 2 * np.pi * b / 3
        p0 = np.array([0.45 * np.cos(ang), 0.25 * np.sin(ang), 0.3 * np.sin(ang + 1)])
        v1 = np.array([-np.sin(ang), np.cos(ang), 0.3 * np.cos(ang)]) * 0.55
        v2 = np.array([-np.cos(ang), -0.4 * np.sin(ang), 0.3]) * 0.55
        mid = p0 + v1 * (0.5 - 0.25)          # segment-1 position at the seam
        p1 = mid + v2 * (0.75 - 0.5)          # keeps the trajectory continuous
        rows_mu += [[*p0, 0.25], [*p1, 0.75]]
        rows_vel += [v1, v2]
        rows_col += [colors3[b], colors3[b]]
    n = len(rows_mu)
    log_s = np.concatenate([np.full((n, 3), np.log(0.11)),
                            np.full((n, 1), np.log(s_t))], axis=1)
    cloud = _cloud(rows_mu, log_s, _identity_quats(n), rows_vel,
                   np.full(n, logit(0.92)), rows_col)
    return Scene4D(cloud, background=np.array([0.04, 0.04, 0.06]))


def _moving_edge(rng) -> Scene4D:
    """High-contrast vertical bar translating over a static backdrop."""
    n_bar = 5
    ys = np.linspace(-0.5, 0.5, n_bar)
    mu, vel, col, ls = [], [], [], []
    for y in ys:
        mu.append([-0.45, y, 0.0, 0.5])
        vel.append([0.9, 0.0, 0.0])
        col.append([0.95, 0.92, 0.85])
        ls.append([np.log(0.05), np.log(0.16), np.log(0.05), np.log(5.0)])
    # static backdrop plane, always alive
    mu.append([0.0, 0.0, 0.8, 0.5])
    vel.append([0.0, 0.0, 0.0])
    col.append([0.16, 0.17, 0.2])
    ls.append([np.log(1.4), np.log(1.4), np.log(0.05), np.log(5.0)])
    n = len(mu)
    opac = np.full(n, logit(0.9))
    opac[-1] = logit(0.97)
    cloud = _cloud(mu, ls, _identity_quats(n), vel, opac, col)
    return Scene4D(cloud, background=np.array([0.03, 0.03, 0.03]))


def _abrupt_appearance(rng) -> Scene4D:
    """Static context plus a blob that blinks in twice at one empty spot.

    The blinking location holds nothing at t=0 (a first-frame reconstruction
    has no points there) and the two short-lived pulses are temporally
    disjoint, so one primitive cannot cover both: representing the scene well
    demands temporal structure, not just shrinking a lifetime.
    """
    n_ctx = 6
    mu = np.concatenate([rng.uniform(-0.6, 0.6, (n_ctx, 2)),
                         rng.uniform(-0.2, 0.2, (n_ctx, 1)),
                         np.full((n_ctx, 1), 0.5)], axis=1)
    ls = np.concatenate([np.log(rng.uniform(0.08, 0.16, (n_ctx, 3))),
                         np.full((n_ctx, 1), np.log(5.0))], axis=1)
    col = rng.uniform(0.2, 0.7, (n_ctx, 3))
    spot = [0.55, -0.45, -0.1]
    for pulse_t in (0.3, 0.75):
        mu = np.vstack([mu, spot + [pulse_t]])
        ls = np.vstack([ls, [np.log(0.15)] * 3 + [np.log(0.05)]])
        col = np.vstack([col, [0.98, 0.85, 0.25]])
    n = n_ctx + 2
    opac = np.full(n, logit(0.85))
    opac[-2:] = logit(0.97)
    cloud = _cloud(mu, ls, _identity_quats(n), np.zeros((n, 3)), opac, col)
    return Scene4D(cloud, background=np.array([0.05, 0.05, 0.07]))


def _random_cloud(rng, n: int) -> Scene4D:
    mu4d = np.concatenate([rng.uniform(-0.9, 0.9, (n, 3)),
                           rng.uniform(0.0, 1.0, (n, 1))], axis=1)
    log_s = np.concatenate([np.log(rng.uniform(0.008, 0.03, (n, 3))),
                            np.log(rng.uniform(0.2, 0.6, (n, 1)))], axis=1)
    q = rng.normal(0, 1, (n, 4))
    vel = rng.normal(0, 0.15, (n, 3))
    opac = rng.uniform(logit(0.3), logit(0.9), n)
    col = rng.uniform(0.1, 1.0, (n, 3))
    cloud = _cloud(mu4d, log_s, q, vel, opac, col)
    return Scene4D(cloud, background=np.array([0.0, 0.0, 0.0]))


def generate_scene(recipe: SceneRecipe) -> Scene4D:
    rng = np.random.default_rng(recipe.seed)
    base = re.sub(r"-\d+$", "", recipe.recipe)
    if base == "orbiting-blobs":
        return _orbiting_blobs(rng)
    if base == "moving-edge":
        return _moving_edge(rng)
    if base == "abrupt-appearance":
        return _abrupt_appearance(rng)
    return _random_cloud(rng, recipe.cloud_size)


def generate(recipe: SceneRecipe):
    """Build the ground-truth scene and its oracle-rendered frame set."""
    scene = generate_scene(recipe)
    cams = ring_cameras(recipe.n_cameras, recipe.resolution)
    times = np.linspace(0.0, 1.0, recipe.n_timesteps)
    holdout_cam = recipe.n_cameras // 2
    options = RenderOptions(mode="exact", dtype=np.float64)
    frames = []
    for ci, cam in enumerate(cams):
        for t in times:
            c = CameraModel(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                            width=cam.width, height=cam.height,
                            rot_w2c=cam.rot_w2c, trans_w2c=cam.trans_w2c,
                            time=float(t))
            img = render_slicing_first(scene, c, float(t), options=options).color
            frames.append(Frame(camera=c, image=img,
                                split="holdout" if ci == holdout_cam else "train"))
    return scene, frames


def init_points_for(scene: Scene4D, rng, points_per_gaussian: int = 40,
                    at_time: float | None = None):
    """Sample a colored point cloud from the ground truth.

    With at_time=None, samples positions along the whole trajectory (a
    multi-frame reconstruction); with an explicit timestamp, samples only the
    primitives visible then (a first-frame reconstruction: short-lived
    objects that have not appeared yet contribute no points).
    """
    g = scene.gaussians
    n = len(g)
    reps = points_per_gaussian
    if at_time is None:
        t = rng.uniform(0.0, 1.0, (n, reps))
        keep = np.ones(n, dtype=bool)
    else:
        t = np.full((n, reps), float(at_time))
        s_t = np.exp(g.log_s4d[:, 3])
        keep = np.exp(-0.5 * ((at_time - g.mu4d[:, 3]) / s_t) ** 2) > 1e-3
    centers = (g.mu4d[:, None, :3]
               + (t - g.mu4d[:, None, 3])[:, :, None] * g.vel3d[:, None, :])
    jitter = rng.normal(0, 1, (n, reps, 3)) * np.exp(g.log_s4d[:, None, :3])
    pts = (centers + jitter)[keep].reshape(-1, 3)
    from .sh import sh_dc_to_rgb
    cols = np.repeat(np.clip(sh_dc_to_rgb(g.sh_coeffs[keep][:, 0, :]), 0, 1),
                     reps, axis=0)
    return pts, cols


def write_dataset(recipe: SceneRecipe, out_dir) -> Path:
    """Standard dataset layout: gt scene PLY, init points, per-frame JSON+PNG."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    scene, frames = generate(recipe)
    ply.save_scene(scene, out / "gt_scene.ply")
    rng = np.random.default_rng(recipe.seed + 1)
    # abrupt-appearance datasets are seeded from the first frame only, so the
    # appearing object is genuinely absent from the initialization
    at_time = 0.0 if recipe.recipe.startswith("abrupt") else None
    pts, cols = init_points_for(scene, rng, at_time=at_time)
    ply.save_points(pts, cols, out / "points.ply")
    holdout = []
    for i, fr in enumerate(frames):
        stem = out / "frames" / f"frame_{i:05d}"
        ply.save_camera(fr.camera, f"{stem}.json")
        imgio.save_png(fr.image, f"{stem}.png")
        if fr.split == "holdout":
            holdout.append(i)
    meta = {"recipe": recipe.recipe, "seed": recipe.seed,
            "n_cameras": recipe.n_cameras, "n_timesteps": recipe.n_timesteps,
            "resolution": recipe.resolution,
            "duration_seconds": scene.duration_seconds,
            "background": [float(v) for v in scene.background],
            "n_frames": len(frames), "holdout": holdout}
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    return out


def load_dataset(path):
    """Read a dataset directory back as (meta, frames)."""
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    holdout = set(meta["holdout"])
    frames = []
    for i in range(meta["n_frames"]):
        stem = root / "frames" / f"frame_{i:05d}"
        cam = ply.load_camera(f"{stem}.json")
        img = imgio.load_png(f"{stem}.png")
        frames.append(Frame(camera=cam, image=img,
                            split="holdout" if i in holdout else "train"))
    return meta, frames
