"""Tile-based forward rasterization and the analytic backward pass.

The forward pass bins screen Gaussians into 16x16 tiles by their 3-sigma
bounding boxes, sorts front to back per tile (stable in the source index)
and alpha-composites color, optical flow and depth. The backward pass walks
each pixel back to front, producing per-Gaussian gradients for every raw
scene parameter plus the two statistics density control consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .projection import (TILE, ProjectionCache, ProjectionState, RenderOptions,
                         ScreenGaussians, project_scene)
from .scene import CameraModel, Scene4D, quat_to_rotmat
from . import sh as shlib


@dataclass
class FrameBuffers:
    color: np.ndarray  # (H,W,3) linear
    flow: np.ndarray   # (H,W,2) pixel displacement per unit normalized time
    depth: np.ndarray  # (H,W) alpha-weighted z
    alpha: np.ndarray  # (H,W) accumulated opacity

    _raster_state: "RasterState | None" = None
    _proj_state: ProjectionState | None = None

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]


@dataclass
class FrameGrads:
    """Upstream gradients w.r.t. the frame buffers."""

    color: np.ndarray
    flow: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray

    @staticmethod
    def zeros(height: int, width: int) -> "FrameGrads":
        return FrameGrads(np.zeros((height, width, 3)), np.zeros((height, width, 2)),
                          np.zeros((height, width)), np.zeros((height, width)))


@dataclass
class RasterState:
    screen: ScreenGaussians
    tile_start: np.ndarray
    tile_end: np.ndarray
    inst_screen: np.ndarray
    tfinal: np.ndarray
    ncontrib: np.ndarray
    background: np.ndarray
    options: RenderOptions
    tiles_x: int
    tiles_y: int


@dataclass
class GradientBuffer:
    """Per-Gaussian gradients mirroring the raw scene parameters."""

    mu4d: np.ndarray
    log_s4d: np.ndarray
    q: np.ndarray
    vel3d: np.ndarray
    opacity_logit: np.ndarray
    sh_coeffs: np.ndarray
    screen_grad_norm: np.ndarray  # NDC-unit screen-position gradient magnitude
    mu_t_grad_abs: np.ndarray
    visible: np.ndarray           # bool, Gaussian was binned this pass

    @staticmethod
    def zeros(n: int, n_coeffs: int) -> "GradientBuffer":
        return GradientBuffer(
            np.zeros((n, 4)), np.zeros((n, 4)), np.zeros((n, 4)), np.zeros((n, 3)),
            np.zeros(n), np.zeros((n, n_coeffs, 3)),
            np.zeros(n), np.zeros(n), np.zeros(n, bool))

    def finite(self) -> bool:
        return all(np.isfinite(getattr(self, f)).all() for f in
                   ("mu4d", "log_s4d", "q", "vel3d", "opacity_logit", "sh_coeffs"))


def _bin_instances(screen: ScreenGaussians, height: int, width: int):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    u = screen.mean2d[:, 0].astype(np.float64)
    v = screen.mean2d[:, 1].astype(np.float64)
    r = screen.radius.astype(np.float64)
    xmin = np.clip(np.floor((u - r) / TILE), 0, tiles_x).astype(np.int32)
    xmax = np.clip(np.floor((u + r) / TILE) + 1, 0, tiles_x).astype(np.int32)
    ymin = np.clip(np.floor((v - r) / TILE), 0, tiles_y).astype(np.int32)
    ymax = np.clip(np.floor((v + r) / TILE) + 1, 0, tiles_y).astype(np.int32)
    counts = np.maximum(xmax - xmin, 0) * np.maximum(ymax - ymin, 0)
    offsets = np.zeros(len(screen) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    inst_tile = np.empty(total, dtype=np.int64)
    inst_depth = np.empty(total, dtype=np.float64)
    inst_screen = np.empty(total, dtype=np.int64)
    if total:
        rect = np.stack([xmin, xmax, ymin, ymax], axis=1)
        _kernels.fill_instances(rect, screen.depth.astype(np.float64),
                                tiles_x, offsets[:-1], inst_tile, inst_depth,
                                inst_screen)
        order = np.lexsort((inst_screen, inst_depth, inst_tile))
        inst_tile = inst_tile[order]
        inst_screen = inst_screen[order]
    tile_start = np.searchsorted(inst_tile, np.arange(n_tiles), side="left").astype(np.int64)
    tile_end = np.searchsorted(inst_tile, np.arange(n_tiles), side="right").astype(np.int64)
    return tile_start, tile_end, inst_screen, tiles_x, tiles_y


def rasterize(screen: ScreenGaussians, cam: CameraModel, background,
              options: RenderOptions | None = None) -> FrameBuffers:
    """Composite screen Gaussians into color/flow/depth/alpha buffers."""
    options = options or RenderOptions()
    dtype = options.dtype
    h, w = cam.height, cam.width
    tile_start, tile_end, inst_screen, tiles_x, tiles_y = _bin_instances(screen, h, w)

    bg = np.asarray(background, dtype=np.float64)
    out_color = np.empty((h, w, 3), dtype=dtype)
    out_flow = np.empty((h, w, 2), dtype=dtype)
    out_depth = np.empty((h, w), dtype=dtype)
    out_alpha = np.empty((h, w), dtype=dtype)
    out_tfinal = np.empty((h, w), dtype=np.float64)
    out_ncontrib = np.empty((h, w), dtype=np.int64)

    _kernels.forward(
        tile_start, tile_end, inst_screen,
        screen.mean2d, screen.conic, screen.color,
        np.ascontiguousarray(screen.oeff), screen.vel2d, screen.depth,
        bg, h, w, TILE, tiles_x,
        float(options.alpha_clamp), float(options.alpha_skip),
        float(options.transmittance_floor),
        out_color, out_flow, out_depth, out_alpha, out_tfinal, out_ncontrib)

    buffers = FrameBuffers(out_color, out_flow, out_depth, out_alpha)
    buffers._raster_state = RasterState(
        screen=screen, tile_start=tile_start, tile_end=tile_end,
        inst_screen=inst_screen, tfinal=out_tfinal, ncontrib=out_ncontrib,
        background=bg, options=options, tiles_x=tiles_x, tiles_y=tiles_y)
    return buffers


def backward_screen(buffers: FrameBuffers, grads: FrameGrads) -> np.ndarray:
    """Rasterizer-only backward: (M,12) gradients per visible screen Gaussian.

    Columns: mean2d xy, conic abc, color rgb, effective opacity, vel2d xy, depth.
    """
    st = buffers._raster_state
    if st is None:
        raise ValueError("buffers were not produced by rasterize()")
    screen = st.screen
    inst_grads = np.zeros((st.inst_screen.shape[0], 12), dtype=np.float64)
    _kernels.backward(
        st.tile_start, st.inst_screen,
        screen.mean2d, screen.conic, screen.color,
        np.ascontiguousarray(screen.oeff), screen.vel2d, screen.depth,
        st.background, buffers.height, buffers.width, TILE, st.tiles_x,
        float(st.options.alpha_clamp), float(st.options.alpha_skip),
        st.tfinal, st.ncontrib,
        np.ascontiguousarray(grads.color, dtype=np.float64),
        np.ascontiguousarray(grads.flow, dtype=np.float64),
        np.ascontiguousarray(grads.depth, dtype=np.float64),
        np.ascontiguousarray(grads.alpha, dtype=np.float64),
        inst_grads)
    per_gauss = np.zeros((len(screen), 12), dtype=np.float64)
    np.add.at(per_gauss, st.inst_screen, inst_grads)
    return per_gauss


# partial derivatives of the rotation matrix w.r.t. unit quaternion (w,x,y,z)
def _rotmat_quat_grads(q: np.ndarray):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack([zero, -2 * z, 2 * y, 2 * z, zero, -2 * x, -2 * y, 2 * x, zero],
                  axis=1).reshape(-1, 3, 3)
    dx = np.stack([zero, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x],
                  axis=1).reshape(-1, 3, 3)
    dy = np.stack([-4 * y, 2 * x, 2 * w, 2 * x, zero, 2 * z, -2 * w, 2 * z, -4 * y],
                  axis=1).reshape(-1, 3, 3)
    dz = np.stack([-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, zero],
                  axis=1).reshape(-1, 3, 3)
    return dw, dx, dy, dz


def backward(buffers: FrameBuffers, grads: FrameGrads) -> GradientBuffer:
    """Full backward: buffers must come from render(); chains rasterizer
    gradients through the projection (including the time-shifted Jacobian)
    to every raw Gaussian parameter."""
    ps = buffers._proj_state
    if ps is None:
        raise ValueError("buffers were not produced by render()")
    per = backward_screen(buffers, grads)

    g_mean = per[:, 0:2]
    g_conic = per[:, 2:5]
    g_color = per[:, 5:8]
    g_oeff = per[:, 8]
    g_velpix = per[:, 9:11]
    g_depth = per[:, 11]

    cam = ps.cam
    act = ps.act
    idx = ps.index
    m = idx.shape[0]
    fx, fy = float(cam.fx), float(cam.fy)
    dt = ps.dt.astype(np.float64)
    P = ps.p_shift.astype(np.float64)
    izs = 1.0 / P[:, 2]
    mcov = ps.m_cov.astype(np.float64)
    W = cam.rot_w2c

    # conic -> 2D covariance (inverse-matrix derivative)
    inv = np.empty((m, 2, 2))
    inv[:, 0, 0] = ps.conic[:, 0]
    inv[:, 0, 1] = ps.conic[:, 1]
    inv[:, 1, 0] = ps.conic[:, 1]
    inv[:, 1, 1] = ps.conic[:, 2]
    gc_full = np.empty((m, 2, 2))
    gc_full[:, 0, 0] = g_conic[:, 0]
    gc_full[:, 0, 1] = 0.5 * g_conic[:, 1]
    gc_full[:, 1, 0] = 0.5 * g_conic[:, 1]
    gc_full[:, 1, 1] = g_conic[:, 2]
    g_cov = -np.einsum("nab,nbc,ncd->nad", inv, gc_full, inv)

    # cov2d = J2 M J2^T + lowpass I
    J2 = np.zeros((m, 2, 3))
    J2[:, 0, 0] = fx * izs
    J2[:, 0, 2] = -fx * P[:, 0] * izs ** 2
    J2[:, 1, 1] = fy * izs
    J2[:, 1, 2] = -fy * P[:, 1] * izs ** 2
    g_j2 = 2.0 * np.einsum("nab,nbc,ncd->nad", g_cov, J2, mcov)
    g_m = np.einsum("nba,nbc,ncd->nad", J2, g_cov, J2)

    # Jacobian entries -> shifted position
    g_p = np.zeros((m, 3))
    g_p[:, 0] += g_j2[:, 0, 2] * (-fx * izs ** 2)
    g_p[:, 1] += g_j2[:, 1, 2] * (-fy * izs ** 2)
    g_p[:, 2] += (g_j2[:, 0, 0] * (-fx * izs ** 2)
                  + g_j2[:, 0, 2] * (2 * fx * P[:, 0] * izs ** 3)
                  + g_j2[:, 1, 1] * (-fy * izs ** 2)
                  + g_j2[:, 1, 2] * (2 * fy * P[:, 1] * izs ** 3))

    g_p3d_direct = np.zeros((m, 3))
    g_vview_direct = np.zeros((m, 3))
    g_dt = np.zeros(m)

    if ps.options.mode == "exact":
        # pixel mean at the shifted position
        g_p[:, 0] += g_mean[:, 0] * fx * izs
        g_p[:, 1] += g_mean[:, 1] * fy * izs
        g_p[:, 2] += -(g_mean[:, 0] * fx * P[:, 0]
                       + g_mean[:, 1] * fy * P[:, 1]) * izs ** 2
        z0 = np.sqrt(np.einsum("ni,ni->n", P, P))
        g_p += (g_depth / z0)[:, None] * P
    else:
        # linearized ray-space mean (exact first derivative) at the base position
        p3 = ps.p3d.astype(np.float64)
        vv = ps.v_view.astype(np.float64)
        izb = ps.izb.astype(np.float64)
        gu, gv = g_mean[:, 0], g_mean[:, 1]
        # u = fx*Px*izb + cx + dt*fx*izb*(Vx - Px*izb*Vz)
        g_p3d_direct[:, 0] += gu * fx * izb * (1.0 - dt * izb * vv[:, 2])
        g_p3d_direct[:, 1] += gv * fy * izb * (1.0 - dt * izb * vv[:, 2])
        g_p3d_direct[:, 2] += (
            gu * fx * (-p3[:, 0] * izb ** 2
                       + dt * (-vv[:, 0] * izb ** 2 + 2 * p3[:, 0] * vv[:, 2] * izb ** 3))
            + gv * fy * (-p3[:, 1] * izb ** 2
                         + dt * (-vv[:, 1] * izb ** 2 + 2 * p3[:, 1] * vv[:, 2] * izb ** 3)))
        g_vview_direct[:, 0] += gu * fx * dt * izb
        g_vview_direct[:, 1] += gv * fy * dt * izb
        g_vview_direct[:, 2] += -(gu * fx * p3[:, 0] + gv * fy * p3[:, 1]) * dt * izb ** 2
        g_dt += (gu * fx * izb * (vv[:, 0] - p3[:, 0] * izb * vv[:, 2])
                 + gv * fy * izb * (vv[:, 1] - p3[:, 1] * izb * vv[:, 2]))
        z0b = ps.z0b.astype(np.float64)
        pv = np.einsum("ni,ni->n", p3, vv)
        zdot = pv / z0b
        g_p3d_direct += (g_depth / z0b)[:, None] * p3
        g_p3d_direct += (g_depth * dt)[:, None] * (vv / z0b[:, None]
                                                   - (pv / z0b ** 3)[:, None] * p3)
        g_vview_direct += (g_depth * dt / z0b)[:, None] * p3
        g_dt += g_depth * zdot

    # flow buffer velocity (always evaluated at the base position)
    p3 = ps.p3d.astype(np.float64)
    vv = ps.v_view.astype(np.float64)
    izb = ps.izb.astype(np.float64)
    g_vview_direct[:, 0] += g_velpix[:, 0] * fx * izb
    g_vview_direct[:, 1] += g_velpix[:, 1] * fy * izb
    g_p3d_direct[:, 2] += -(g_velpix[:, 0] * fx * vv[:, 0]
                            + g_velpix[:, 1] * fy * vv[:, 1]) * izb ** 2

    # the shifted position feeds both mean (exact) and Jacobian paths
    g_p3d = g_p + g_p3d_direct
    g_vview = dt[:, None] * g_p + g_vview_direct
    g_dt += np.einsum("ni,ni->n", g_p, vv)

    # camera-frame covariance -> world covariance -> rotation & scales
    g_sigma = np.einsum("ji,njk,kl->nil", W, g_m, W)
    s_xyz = act.s_xyz[idx].astype(np.float64)
    q_unit = act.q_unit[idx].astype(np.float64)
    R = quat_to_rotmat(q_unit)
    D = s_xyz ** 2
    g_r = 2.0 * np.einsum("nab,nbc->nac", g_sigma, R * D[:, None, :])
    rtgr = np.einsum("nba,nbc,ncd->nad", R, g_sigma, R)
    g_log_s_xyz = 2.0 * D * np.einsum("nii->ni", rtgr)

    dw, dx_, dy_, dz_ = _rotmat_quat_grads(q_unit)
    g_qhat = np.stack([np.einsum("nij,nij->n", g_r, d) for d in (dw, dx_, dy_, dz_)],
                      axis=1)
    # normalize-on-use backward: qhat = q / ||q||
    q_norm = act.q_norm[idx].astype(np.float64)
    g_q = (g_qhat - np.einsum("ni,ni->n", g_qhat, q_unit)[:, None] * q_unit) \
        / q_norm[:, None]

    # temporal weight and opacity
    w_t = ps.w_t.astype(np.float64)
    s_t = act.s_t[idx].astype(np.float64)
    opac = act.opacity[idx].astype(np.float64)
    g_opacity = g_oeff * w_t
    g_wt = g_oeff * opac
    g_dt += g_wt * w_t * (-dt / s_t ** 2)
    g_log_s_t = g_wt * w_t * (dt ** 2) / (s_t ** 2)
    g_logit = g_opacity * opac * (1.0 - opac)

    # SH color: coefficients and view direction
    coeffs = act.sh_coeffs[idx].astype(np.float64)
    from .scene import sh_degree_from_coeffs
    degree = sh_degree_from_coeffs(coeffs.shape[1])
    d_coeffs, d_dir = shlib.backward_color(coeffs, ps.dir_unit.astype(np.float64),
                                           ps.basis.astype(np.float64),
                                           ps.clamp_mask, g_color, degree)
    dirs = ps.dir_unit.astype(np.float64)
    proj = d_dir - np.einsum("ni,ni->n", d_dir, dirs)[:, None] * dirs
    g_uvec = proj / ps.dir_len.astype(np.float64)[:, None]
    vel_world = act.vel3d[idx].astype(np.float64)
    g_dt += np.einsum("ni,ni->n", g_uvec, vel_world)

    # assemble world-frame gradients
    g_mu_xyz = g_p3d @ W + g_uvec
    g_vel3d = g_vview @ W + dt[:, None] * g_uvec
    g_mu_t = -g_dt

    n = len(act)
    out = GradientBuffer.zeros(n, coeffs.shape[1])
    out.mu4d[idx, :3] = g_mu_xyz
    out.mu4d[idx, 3] = g_mu_t
    out.log_s4d[idx, :3] = g_log_s_xyz
    out.log_s4d[idx, 3] = g_log_s_t
    out.vel3d[idx] = g_vel3d
    out.opacity_logit[idx] = g_logit
    out.sh_coeffs[idx] = d_coeffs
    out.q[idx] = g_q
    out.visible[idx] = True

    # density-control statistics: NDC-unit screen gradient, |dL/d mu_t|
    ndc = np.stack([g_mean[:, 0] * 0.5 * cam.width,
                    g_mean[:, 1] * 0.5 * cam.height], axis=1)
    out.screen_grad_norm[idx] = np.linalg.norm(ndc, axis=1)
    out.mu_t_grad_abs[idx] = np.abs(g_mu_t)
    return out


def render(scene: Scene4D, cam: CameraModel, t0: float,
           options: RenderOptions | None = None,
           cache: ProjectionCache | None = None) -> FrameBuffers:
    """Project + rasterize; deterministic for fixed inputs."""
    options = options or RenderOptions()
    screen, state = project_scene(scene, cam, t0, cache=cache, options=options,
                                  want_state=True)
    buffers = rasterize(screen, cam, scene.background, options)
    buffers._proj_state = state
    return buffers
