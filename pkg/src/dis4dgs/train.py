"""Optimization loop with decoupled spatial/temporal density control.

Adam runs on the raw (pre-activation) parameters with per-group learning
rates. Spatial densification follows the familiar clone/split recipe driven
by accumulated screen-position gradients; the temporal path splits
long-lived primitives along the time axis when the accumulated magnitude of
the mu_t gradient is large, leaving spatial log-scales untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .losses import LossConfig, flow_gradient_loss, photometric_loss, psnr
from .projection import RenderOptions
from .rasterize import FrameGrads, GradientBuffer, backward, render
from .scene import GaussianCloud, Scene4D, logit, quat_to_rotmat
from . import synthetic


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 20000
    seed: int = 0
    sh_degree: int = 3
    mode: str = "exact"
    # adam
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    # per-group learning rates; the spatial-mean rate decays exponentially
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_mu_t: float = 1.6e-4
    lr_vel: float = 1.6e-4
    lr_scales: float = 5e-3
    lr_quat: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    # densification / pruning
    densify_grad_threshold: float = 5e-5
    temporal_grad_threshold: float = -1.0   # <0: use densify_grad_threshold
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: int = 15000
    opacity_reset_interval: int = 3000
    prune_opacity: float = 0.005
    split_shrink: float = 1.6
    percent_dense: float = 0.01
    temporal_split: bool = True
    temporal_split_floor: float = -1.0      # <0: use 1/(4 * frame_count)
    max_gaussians: int = 200000
    # losses
    lambda_dssim: float = 0.2
    lambda_flow: float = 0.01
    epsilon_flow: float = 1e-6
    # evaluation
    holdout_every: int = 500

    def __post_init__(self):
        if self.densify_grad_threshold <= 0:
            raise ValueError("'densify_grad_threshold' must be positive")
        for name in ("densify_interval", "opacity_reset_interval", "iterations",
                     "holdout_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"'{name}' must be positive")
        for name in ("lambda_dssim", "lambda_flow", "epsilon_flow"):
            if getattr(self, name) < 0:
                raise ValueError(f"'{name}' must be non-negative")
        if self.mode not in ("exact", "fast"):
            raise ValueError("'mode' must be exact or fast")

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_dssim=self.lambda_dssim,
                          lambda_flow=self.lambda_flow,
                          epsilon_flow=self.epsilon_flow)

    def spatial_threshold(self) -> float:
        return self.densify_grad_threshold

    def temporal_threshold(self) -> float:
        t = self.temporal_grad_threshold
        return self.densify_grad_threshold if t < 0 else t


PARAM_GROUPS = ("mu4d", "log_s4d", "q", "vel3d", "opacity_logit", "sh_coeffs")


class Adam:
    """Per-group Adam on the raw cloud arrays, with densification remapping."""

    def __init__(self, cloud: GaussianCloud, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(getattr(cloud, k)) for k in PARAM_GROUPS}
        self.v = {k: np.zeros_like(getattr(cloud, k)) for k in PARAM_GROUPS}

    def lr_for(self, key: str, iteration: int, extent: float) -> np.ndarray | float:
        cfg = self.cfg
        if key == "mu4d":
            frac = iteration / max(cfg.iterations, 1)
            decayed = cfg.lr_means * (cfg.lr_means_final / cfg.lr_means) ** frac
            return np.array([decayed * extent] * 3 + [cfg.lr_mu_t])
        return {"log_s4d": cfg.lr_scales, "q": cfg.lr_quat, "vel3d": cfg.lr_vel,
                "opacity_logit": cfg.lr_opacity, "sh_coeffs": cfg.lr_sh}[key]

    def step(self, cloud: GaussianCloud, grads: GradientBuffer,
             iteration: int, extent: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for key in PARAM_GROUPS:
            g = getattr(grads, key)
            m = self.m[key]
            v = self.v[key]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            lr = self.lr_for(key, iteration, extent)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            getattr(cloud, key)[...] -= update

    def remap(self, origin: np.ndarray) -> None:
        """Rows with origin >= 0 inherit state; new rows start at zero."""
        keep = origin >= 0
        src = origin[keep]
        for key in PARAM_GROUPS:
            for store in (self.m, self.v):
                old = store[key]
                new = np.zeros((len(origin),) + old.shape[1:], dtype=old.dtype)
                new[keep] = old[src]
                store[key] = new

    def reset_group(self, key: str) -> None:
        self.m[key][...] = 0.0
        self.v[key][...] = 0.0


@dataclass
class DensifyStats:
    grad_sum: np.ndarray
    mu_t_sum: np.ndarray
    count: np.ndarray

    @staticmethod
    def zeros(n: int) -> "DensifyStats":
        return DensifyStats(np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64))

    def accumulate(self, grads: GradientBuffer) -> None:
        vis = grads.visible
        self.grad_sum[vis] += grads.screen_grad_norm[vis]
        self.mu_t_sum[vis] += grads.mu_t_grad_abs[vis]
        self.count[vis] += 1

    def means(self):
        c = np.maximum(self.count, 1)
        return self.grad_sum / c, self.mu_t_sum / c


@dataclass
class StepReport:
    iteration: int
    total: float
    l1: float
    dssim: float
    l_fg: float
    n_visible: int


def train_step(scene: Scene4D, camera, target, t0: float, cfg: TrainConfig,
               opt: Adam, stats: DensifyStats, iteration: int, extent: float,
               loss_cfg: LossConfig | None = None,
               options: RenderOptions | None = None) -> StepReport:
    """One render -> loss -> backward -> Adam update."""
    options = options or RenderOptions(mode=cfg.mode, dtype=np.float64)
    loss_cfg = loss_cfg or cfg.loss_config()
    buffers = render(scene, camera, t0, options=options)
    photo, d_color, parts = photometric_loss(buffers.color, target, loss_cfg)
    if loss_cfg.lambda_flow > 0:
        edge_img = target if loss_cfg.edge_source == "target" else buffers.color
        l_fg, d_flow = flow_gradient_loss(buffers.flow, edge_img, loss_cfg)
    else:
        l_fg, d_flow = 0.0, np.zeros_like(buffers.flow, dtype=np.float64)
    total = photo + l_fg
    if not math.isfinite(total):
        term = {"l1": parts["l1"], "dssim": parts["dssim"], "l_fg": l_fg}
        bad = [k for k, val in term.items() if not math.isfinite(val)]
        raise TrainingError(
            f"non-finite loss at iteration {iteration}: {bad or ['total']}")

    h, w = buffers.height, buffers.width
    grads_in = FrameGrads(color=d_color, flow=d_flow,
                          depth=np.zeros((h, w)), alpha=np.zeros((h, w)))
    gbuf = backward(buffers, grads_in)
    if not gbuf.finite():
        raise TrainingError(f"non-finite gradients at iteration {iteration}")
    opt.step(scene.gaussians, gbuf, iteration, extent)
    stats.accumulate(gbuf)
    return StepReport(iteration=iteration, total=total, l1=parts["l1"],
                      dssim=parts["dssim"], l_fg=l_fg,
                      n_visible=int(gbuf.visible.sum()))


@dataclass
class DensifyReport:
    n_cloned: int = 0
    n_spatial_split: int = 0
    n_temporal_split: int = 0
    n_pruned: int = 0


def densify_and_prune(scene: Scene4D, stats: DensifyStats, cfg: TrainConfig,
                      opt: Adam | None, rng: np.random.Generator,
                      extent: float, temporal_floor: float) -> DensifyReport:
    """Clone/split spatially, split temporally, prune: mutates the scene.

    Spatial splitting never touches log s_t or mu_t; temporal splitting never
    touches spatial log-scales (children's spatial means follow the velocity
    so trajectories stay continuous).
    """
    g = scene.gaussians
    n = len(g)
    rep = DensifyReport()
    grad_mean, mu_t_mean = stats.means()
    seen = stats.count > 0

    s_xyz = np.exp(g.log_s4d[:, :3])
    s_t = np.exp(g.log_s4d[:, 3])
    spatial_hot = seen & (grad_mean >= cfg.spatial_threshold())
    big = s_xyz.max(axis=1) > cfg.percent_dense * extent
    clone_mask = spatial_hot & ~big
    split_mask = spatial_hot & big
    temporal_mask = (seen & (mu_t_mean >= cfg.temporal_threshold())
                     & (s_t > temporal_floor))
    if not cfg.temporal_split:
        temporal_mask[:] = False
    if n >= cfg.max_gaussians:
        clone_mask[:] = False
        split_mask[:] = False
        temporal_mask[:] = False

    # phase A: spatial. Untouched originals keep identity; split parents die.
    parts = [g.select(~split_mask)]
    origin = [np.nonzero(~split_mask)[0]]
    tflag = [temporal_mask[~split_mask]]

    clones = g.select(clone_mask)
    rep.n_cloned = len(clones)
    if len(clones):
        parts.append(clones)
        origin.append(np.full(len(clones), -1))
        tflag.append(temporal_mask[clone_mask])

    if split_mask.any():
        parent = g.select(split_mask)
        rep.n_spatial_split = len(parent)
        rot = quat_to_rotmat(parent.q / np.linalg.norm(parent.q, axis=1, keepdims=True))
        std = np.exp(parent.log_s4d[:, :3])
        for _ in range(2):
            child = parent.copy()
            local = rng.normal(0.0, 1.0, (len(parent), 3)) * std
            child.mu4d[:, :3] = parent.mu4d[:, :3] + np.einsum("nij,nj->ni", rot, local)
            child.log_s4d[:, :3] = parent.log_s4d[:, :3] - np.log(cfg.split_shrink)
            parts.append(child)
            origin.append(np.full(len(child), -1))
            tflag.append(temporal_mask[split_mask])

    merged = GaussianCloud.concatenate(parts)
    origin = np.concatenate(origin)
    tflag = np.concatenate(tflag)

    # phase B: temporal split (parents replaced by two time-shifted children)
    if tflag.any():
        parent = merged.select(tflag)
        rep.n_temporal_split += len(parent)
        keep = merged.select(~tflag)
        origin_keep = origin[~tflag]
        children = []
        for sign in (-0.5, +0.5):
            child = parent.copy()
            st = np.exp(parent.log_s4d[:, 3])
            shift = sign * st
            child.mu4d[:, 3] = parent.mu4d[:, 3] + shift
            child.mu4d[:, :3] = parent.mu4d[:, :3] + shift[:, None] * parent.vel3d
            child.log_s4d[:, 3] = parent.log_s4d[:, 3] - np.log(cfg.split_shrink)
            children.append(child)
        merged = GaussianCloud.concatenate([keep] + children)
        origin = np.concatenate([origin_keep,
                                 np.full(2 * len(parent), -1)])

    # phase C: prune transparent primitives
    opac = 1.0 / (1.0 + np.exp(-merged.opacity_logit))
    keep_mask = opac >= cfg.prune_opacity
    rep.n_pruned = int((~keep_mask).sum())
    merged = merged.select(keep_mask)
    origin = origin[keep_mask]

    scene.gaussians = merged
    if opt is not None:
        opt.remap(origin)
    return rep


def reset_opacity(scene: Scene4D, opt: Adam | None, ceiling: float = 0.01) -> None:
    cap = logit(ceiling)
    ol = scene.gaussians.opacity_logit
    np.minimum(ol, cap, out=ol)
    if opt is not None:
        opt.reset_group("opacity_logit")


def camera_extent(cameras) -> float:
    centers = np.stack([c.center for c in cameras])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max()) or 1.0


def evaluate_holdout(scene: Scene4D, frames, options=None):
    options = options or RenderOptions(mode="exact", dtype=np.float64)
    from .losses import ssim as ssim_fn
    vals_psnr, vals_ssim = [], []
    for fr in frames:
        buf = render(scene, fr.camera, fr.camera.time, options=options)
        vals_psnr.append(psnr(np.clip(buf.color, 0, 1), fr.image))
        vals_ssim.append(ssim_fn(np.clip(buf.color, 0, 1), fr.image))
    return float(np.mean(vals_psnr)), float(np.mean(vals_ssim))


def fit(dataset, cfg: TrainConfig, out_dir=None, log_file=None, quiet=False):
    """Train a scene against a dataset directory (or (meta, frames) pair).

    Returns (scene, history); history holds the NDJSON metric records.
    """
    if isinstance(dataset, (str, Path)):
        meta, frames = synthetic.load_dataset(dataset)
        points_path = Path(dataset) / "points.ply"
    else:
        meta, frames = dataset
        points_path = None
    if not frames:
        raise TrainingError("dataset is empty")
    hw = frames[0].image.shape[:2]
    if any(fr.image.shape[:2] != hw for fr in frames):
        raise TrainingError("dataset images have inconsistent dimensions")

    train_frames = [f for f in frames if f.split == "train"]
    holdout_frames = [f for f in frames if f.split == "holdout"]
    if not train_frames:
        raise TrainingError("dataset has no training frames")

    from .scene import init_from_points
    from . import ply as plyio
    if points_path is not None and points_path.exists():
        pts, cols = plyio.load_points(points_path)
    else:
        rng0 = np.random.default_rng(cfg.seed)
        gt = synthetic.generate_scene(synthetic.SceneRecipe(meta["recipe"], meta["seed"]))
        at_time = 0.0 if meta["recipe"].startswith("abrupt") else None
        pts, cols = synthetic.init_points_for(gt, rng0, at_time=at_time)
    scene = init_from_points(
        pts, cols, sh_degree=cfg.sh_degree,
        duration_seconds=meta.get("duration_seconds", 1.0),
        background=meta.get("background", (0, 0, 0)), seed=cfg.seed)

    extent = camera_extent([f.camera for f in frames])
    n_times = meta.get("n_timesteps", len({f.camera.time for f in frames}))
    floor = cfg.temporal_split_floor
    if floor < 0:
        floor = 1.0 / (4.0 * max(n_times, 1))

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(scene.gaussians, cfg)
    stats = DensifyStats.zeros(len(scene.gaussians))
    options = RenderOptions(mode=cfg.mode, dtype=np.float64)
    loss_cfg = cfg.loss_config()

    history = []
    log_fh = open(log_file, "w") if log_file else None
    n_tsplit = 0
    n_ssplit = 0
    try:
        for it in range(1, cfg.iterations + 1):
            fr = train_frames[int(rng.integers(len(train_frames)))]
            rep = train_step(scene, fr.camera, fr.image, fr.camera.time, cfg,
                             opt, stats, it, extent, loss_cfg, options)

            if (cfg.densify_start <= it <= cfg.densify_stop
                    and it % cfg.densify_interval == 0):
                drep = densify_and_prune(scene, stats, cfg, opt, rng, extent, floor)
                n_tsplit += drep.n_temporal_split
                n_ssplit += drep.n_spatial_split + drep.n_cloned
                stats = DensifyStats.zeros(len(scene.gaussians))
            if it % cfg.opacity_reset_interval == 0 and it <= cfg.densify_stop:
                reset_opacity(scene, opt)

            if it % cfg.holdout_every == 0 or it == cfg.iterations:
                ps, ss = (evaluate_holdout(scene, holdout_frames, options)
                          if holdout_frames else (float("nan"), float("nan")))
                record = {"iter": it, "l1": rep.l1, "dssim": rep.dssim,
                          "l_fg": rep.l_fg,
                          "psnr_holdout": None if math.isnan(ps) else ps,
                          "n_gaussians": len(scene.gaussians),
                          "n_temporal_splits": n_tsplit,
                          "n_spatial_splits": n_ssplit}
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if not quiet:
                    print(f"[{it:6d}] l1={rep.l1:.4f} dssim={rep.dssim:.4f} "
                          f"l_fg={rep.l_fg:.5f} psnr={ps:.2f} "
                          f"n={len(scene.gaussians)}")
    finally:
        if log_fh:
            log_fh.close()

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        plyio.save_scene(scene, out / "trained.ply")
        (out / "metrics.ndjson").write_text(
            "".join(json.dumps(r) + "\n" for r in history))
    return scene, history


# --- strict key=value config files for the CLI ---

def parse_config_file(path) -> TrainConfig:
    """TOML-style `key = value` lines; unknown keys are errors."""
    text = Path(path).read_text()
    known = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip().strip('"')
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
        current = getattr(TrainConfig(), key)
        if isinstance(current, bool):
            if val.lower() not in ("true", "false"):
                raise ValueError(f"{path}:{lineno}: '{key}' expects true/false")
            values[key] = val.lower() == "true"
        elif isinstance(current, int):
            values[key] = int(val)
        elif isinstance(current, float):
            values[key] = float(val)
        else:
            values[key] = val
    try:
        return TrainConfig(**values)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None
