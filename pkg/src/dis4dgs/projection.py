"""Projection-first transform chain.

World-space Gaussians are moved to camera space once per camera (means,
velocities and rotated covariances are cached); the requested timestamp then
only shifts the mean along the camera-space velocity and re-evaluates the
perspective Jacobian at the shifted position. Slicing to a static 2D kernel
happens in ray space, never in world space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ActivatedGaussians, CameraModel, Scene4D, activate, covariance3d
from . import sh as shlib

TILE = 16


@dataclass
class RenderOptions:
    mode: str = "exact"              # "exact" | "fast"
    dtype: type = np.float32
    temporal_cutoff: float = 1.0 / 255.0  # cull below this temporal weight; 0 disables
    lowpass: float = 0.3             # pixel-space dilation added to the 2D covariance
    alpha_clamp: float = 0.99
    alpha_skip: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    # bin every Gaussian into every tile: removes the 3-sigma truncation so the
    # rendered image is a continuous function of the parameters (finite
    # difference harnesses); far too slow for real scenes
    full_extent: bool = False

    def __post_init__(self):
        if self.mode not in ("exact", "fast"):
            raise ValueError(f"mode must be 'exact' or 'fast', got {self.mode!r}")


@dataclass
class CameraSpaceGaussians:
    """Batch of Gaussians after the world-to-camera stage."""

    p3d: np.ndarray      # (N,3) camera-space mean
    p_t: np.ndarray      # (N,) temporal mean, untouched by the view transform
    v_view: np.ndarray   # (N,3) camera-space velocity (rotation only)
    sigma3d: np.ndarray  # (N,3,3) world-frame spatial covariance
    s_t: np.ndarray      # (N,) temporal scale
    opacity: np.ndarray  # (N,) activated opacity
    sh_coeffs: np.ndarray
    mu_xyz: np.ndarray   # (N,3) world mean, kept for view-direction evaluation
    vel3d: np.ndarray    # (N,3) world velocity

    def __len__(self) -> int:
        return self.p3d.shape[0]


@dataclass
class ScreenGaussians:
    """Batch of visible per-(camera, timestamp) screen-space Gaussians."""

    index: np.ndarray           # (M,) source Gaussian ids
    mean2d: np.ndarray          # (M,2) pixel coordinates
    depth: np.ndarray           # (M,) ray-space z for sorting
    conic: np.ndarray           # (M,3) (a,b,c), inverse 2D covariance
    vel2d: np.ndarray           # (M,2) pixel-unit screen velocity per unit time
    temporal_weight: np.ndarray  # (M,) in (0,1]
    opacity: np.ndarray         # (M,) activated opacity, pre-temporal
    color: np.ndarray           # (M,3)
    radius: np.ndarray          # (M,) int32 pixel radius for tile binning

    def __len__(self) -> int:
        return self.index.shape[0]

    @property
    def oeff(self) -> np.ndarray:
        return self.opacity * self.temporal_weight


@dataclass
class ProjectionCache:
    """Camera-stage cache keyed on the pose+intrinsics identity (and compute
    dtype). The scene is assumed immutable while the cache lives; training
    renders without one."""

    key: bytes | None = None
    csg: CameraSpaceGaussians | None = None
    act: ActivatedGaussians | None = None
    m_cov: np.ndarray | None = None     # (N,3,3) W Sigma W^T
    base_uv: np.ndarray | None = None   # (N,2) pixel mean at dt=0
    izb: np.ndarray | None = None       # (N,) 1/p3d_z
    vel_pix: np.ndarray | None = None   # (N,2) pixel-unit flow velocity (Vx/Pz form)
    mean_rate: np.ndarray | None = None  # (N,2) exact d(mean2d)/dt, for the fast mean
    z0: np.ndarray | None = None        # (N,) ||p3d||
    zdot: np.ndarray | None = None      # (N,) d||P||/dt at dt=0
    cam_center: np.ndarray | None = None
    n_builds: int = 0

    def valid_for(self, cam: CameraModel, dtype=None) -> bool:
        want = cam.pose_key() + (b"" if dtype is None else np.dtype(dtype).str.encode())
        if dtype is None:
            return self.key is not None and self.key.startswith(cam.pose_key())
        return self.key == want


@dataclass
class ProjectionState:
    """Everything the projection backward needs, for the visible subset."""

    index: np.ndarray
    act: ActivatedGaussians
    cam: CameraModel
    options: RenderOptions
    t0: float
    dt: np.ndarray        # (M,)
    p3d: np.ndarray       # (M,3)
    v_view: np.ndarray    # (M,3)
    p_shift: np.ndarray   # (M,3)
    m_cov: np.ndarray     # (M,3,3)
    conic: np.ndarray     # (M,3)
    w_t: np.ndarray       # (M,)
    izb: np.ndarray       # (M,) 1/p3d_z
    z0b: np.ndarray       # (M,) ||p3d||
    dir_unit: np.ndarray  # (M,3)
    dir_len: np.ndarray   # (M,)
    basis: np.ndarray     # (M,K)
    clamp_mask: np.ndarray  # (M,3)


def to_camera(act: ActivatedGaussians, cam: CameraModel,
              dtype=np.float64) -> CameraSpaceGaussians:
    """World -> camera for means and velocities; velocity gets rotation only."""
    R = cam.rot_w2c.astype(dtype)
    t = cam.trans_w2c.astype(dtype)
    mu = act.mu_xyz.astype(dtype)
    vel = act.vel3d.astype(dtype)
    return CameraSpaceGaussians(
        p3d=mu @ R.T + t,
        p_t=act.mu_t.astype(dtype),
        v_view=vel @ R.T,
        sigma3d=covariance3d(act).astype(dtype),
        s_t=act.s_t.astype(dtype),
        opacity=act.opacity.astype(dtype),
        sh_coeffs=act.sh_coeffs.astype(dtype),
        mu_xyz=mu,
        vel3d=vel)


def project_mean(p: np.ndarray, near: float = 0.0):
    """Ray-space map (P0/P2, P1/P2, ||P||); returns (x0, y0, z0, in_front)."""
    p = np.atleast_2d(np.asarray(p))
    in_front = p[:, 2] >= near if near > 0 else np.ones(p.shape[0], bool)
    z = np.where(p[:, 2] == 0, 1.0, p[:, 2])  # culled rows are never read
    x0 = p[:, 0] / z
    y0 = p[:, 1] / z
    z0 = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2 + p[:, 2] ** 2)
    return x0, y0, z0, in_front


def project_velocity(v_view: np.ndarray, p: np.ndarray):
    """Ray-space velocity (Vx/P2, Vy/P2, ||V||)."""
    v = np.atleast_2d(np.asarray(v_view))
    p = np.atleast_2d(np.asarray(p))
    v0 = v[:, 0] / p[:, 2]
    v1 = v[:, 1] / p[:, 2]
    v2 = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 2] ** 2)
    return v0, v1, v2


def jacobian_at(p_kt: np.ndarray, fx: float = 1.0, fy: float = 1.0) -> np.ndarray:
    """Jacobian of the ray-space map at p_kt, rows 1-2 scaled by (fx, fy).

    Accepts (3,) or (N,3); returns (3,3) or (N,3,3).
    """
    p = np.atleast_2d(np.asarray(p_kt))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    l = np.sqrt(x * x + y * y + z * z)
    J = np.zeros((p.shape[0], 3, 3), dtype=p.dtype)
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    J[:, 2, 0] = x / l
    J[:, 2, 1] = y / l
    J[:, 2, 2] = z / l
    if np.asarray(p_kt).ndim == 1:
        return J[0]
    return J


def _cov2d_from_cached(m: np.ndarray, p: np.ndarray, fx, fy, lowpass):
    """Upper 2x2 of J M J^T from the cached camera-frame covariance M.

    Expanded componentwise so the per-timestamp cost stays at O(N) scalar ops.
    Returns (A, B, C) with the low-pass dilation already added to A and C.
    """
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    iz = 1.0 / pz
    iz2 = iz * iz
    m00 = m[:, 0, 0]
    m01 = m[:, 0, 1]
    m02 = m[:, 0, 2]
    m11 = m[:, 1, 1]
    m12 = m[:, 1, 2]
    m22 = m[:, 2, 2]
    xz = px * iz
    yz = py * iz
    A = (fx * fx) * iz2 * (m00 - 2.0 * m02 * xz + m22 * xz * xz) + lowpass
    B = (fx * fy) * iz2 * (m01 - m02 * yz - m12 * xz + m22 * xz * yz)
    C = (fy * fy) * iz2 * (m11 - 2.0 * m12 * yz + m22 * yz * yz) + lowpass
    return A, B, C


def _camera_stage(csg: CameraSpaceGaussians, cam: CameraModel, dtype):
    """Per-camera, time-independent quantities (the cacheable stage)."""
    W = cam.rot_w2c.astype(dtype)
    m_cov = np.einsum("ij,njk,lk->nil", W, csg.sigma3d, W, optimize=True)
    pz = csg.p3d[:, 2]
    safe_z = np.where(pz == 0, dtype(1.0), pz)
    izb = (1.0 / safe_z).astype(dtype)
    base_uv = np.stack([dtype(cam.fx) * csg.p3d[:, 0] * izb + dtype(cam.cx),
                        dtype(cam.fy) * csg.p3d[:, 1] * izb + dtype(cam.cy)], axis=1)
    vel_pix = np.stack([dtype(cam.fx) * csg.v_view[:, 0] * izb,
                        dtype(cam.fy) * csg.v_view[:, 1] * izb], axis=1)
    # exact screen-velocity derivative (keeps the fast mean second-order in dt)
    mean_rate = np.stack(
        [dtype(cam.fx) * izb * (csg.v_view[:, 0] - csg.p3d[:, 0] * izb * csg.v_view[:, 2]),
         dtype(cam.fy) * izb * (csg.v_view[:, 1] - csg.p3d[:, 1] * izb * csg.v_view[:, 2])],
        axis=1)
    z0 = np.linalg.norm(csg.p3d, axis=1).astype(dtype)
    zdot = (np.einsum("ni,ni->n", csg.p3d, csg.v_view)
            / np.where(z0 == 0, dtype(1.0), z0)).astype(dtype)
    return m_cov.astype(dtype), base_uv, izb, vel_pix, mean_rate, z0, zdot


def _build_cache(scene: Scene4D, cam: CameraModel, options: RenderOptions,
                 cache: ProjectionCache) -> None:
    dtype = options.dtype
    act = activate(scene.gaussians.astype(dtype))
    csg = to_camera(act, cam, dtype=dtype)
    m_cov, base_uv, izb, vel_pix, mean_rate, z0, zdot = _camera_stage(csg, cam, dtype)
    cache.key = cam.pose_key() + np.dtype(dtype).str.encode()
    cache.act = act
    cache.csg = csg
    cache.m_cov = m_cov
    cache.base_uv = base_uv
    cache.izb = izb
    cache.vel_pix = vel_pix
    cache.mean_rate = mean_rate
    cache.z0 = z0
    cache.zdot = zdot
    cache.cam_center = cam.center.astype(dtype)
    cache.n_builds += 1


def _time_stage(cache: ProjectionCache, cam: CameraModel, t0, sh_degree: int,
                options: RenderOptions, want_state: bool):
    """Per-timestamp slice in ray space, reading only cached camera-stage data."""
    dtype = options.dtype
    t0 = dtype(t0)
    csg = cache.csg
    dt = t0 - csg.p_t
    p_shift = csg.p3d + dt[:, None] * csg.v_view

    w_t = np.exp(-0.5 * (dt / csg.s_t) ** 2)
    visible = p_shift[:, 2] >= dtype(cam.near)
    if options.temporal_cutoff > 0:
        visible &= w_t >= dtype(options.temporal_cutoff)
    idx = np.nonzero(visible)[0].astype(np.int32)

    p3d = csg.p3d[idx]
    v_view = csg.v_view[idx]
    ps = p_shift[idx]
    m = cache.m_cov[idx]
    dts = dt[idx]

    fx, fy = dtype(cam.fx), dtype(cam.fy)
    if options.mode == "exact":
        izs = 1.0 / ps[:, 2]
        mean2d = np.stack([fx * ps[:, 0] * izs + dtype(cam.cx),
                           fy * ps[:, 1] * izs + dtype(cam.cy)], axis=1)
        depth = np.sqrt(ps[:, 0] ** 2 + ps[:, 1] ** 2 + ps[:, 2] ** 2)
    else:
        mean2d = cache.base_uv[idx] + dts[:, None] * cache.mean_rate[idx]
        depth = cache.z0[idx] + dts * cache.zdot[idx]

    A, B, C = _cov2d_from_cached(m, ps, fx, fy, dtype(options.lowpass))
    det = A * C - B * B
    ok = det > 0
    inv_det = np.where(ok, 1.0 / np.where(det == 0, dtype(1.0), det), dtype(0.0))
    conic = np.stack([C * inv_det, -B * inv_det, A * inv_det], axis=1)
    mid = 0.5 * (A + C)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, dtype(0.1)))
    radius = np.ceil(3.0 * np.sqrt(lam)).astype(np.int32)
    if options.full_extent:
        radius = np.full_like(radius, cam.width + cam.height + 2 * TILE)

    # view-dependent color at the time-shifted world position
    world_shift = csg.mu_xyz[idx] + dts[:, None] * csg.vel3d[idx]
    u_vec = world_shift - cache.cam_center
    dir_len = np.sqrt(np.einsum("ni,ni->n", u_vec, u_vec))
    safe_len = np.where(dir_len == 0, dtype(1.0), dir_len)
    dir_unit = u_vec / safe_len[:, None]
    color, basis, clamp_mask = shlib.eval_color(csg.sh_coeffs[idx], dir_unit, sh_degree)

    if not ok.all():
        keep = np.nonzero(ok)[0]
        idx = idx[keep]
        mean2d, depth, conic, radius = mean2d[keep], depth[keep], conic[keep], radius[keep]
        color, basis, clamp_mask = color[keep], basis[keep], clamp_mask[keep]
        p3d, v_view, ps, m, dts = p3d[keep], v_view[keep], ps[keep], m[keep], dts[keep]
        dir_unit, dir_len = dir_unit[keep], dir_len[keep]

    screen = ScreenGaussians(
        index=idx, mean2d=mean2d, depth=depth, conic=conic,
        vel2d=cache.vel_pix[idx], temporal_weight=w_t[idx],
        opacity=csg.opacity[idx], color=color, radius=radius)
    if not want_state:
        return screen

    state = ProjectionState(
        index=idx, act=cache.act, cam=cam, options=options, t0=float(t0),
        dt=dts, p3d=p3d, v_view=v_view, p_shift=ps, m_cov=m, conic=conic,
        w_t=w_t[idx], izb=cache.izb[idx], z0b=cache.z0[idx],
        dir_unit=dir_unit, dir_len=dir_len, basis=basis, clamp_mask=clamp_mask)
    return screen, state


def project_scene(scene: Scene4D, cam: CameraModel, t0: float,
                  cache: ProjectionCache | None = None,
                  options: RenderOptions | None = None,
                  want_state: bool = False):
    """Project every Gaussian in the scene for timestamp t0.

    The camera stage is (re)built only when the pose hash changes; repeated
    calls with the same camera and varying t0 reuse the cached arrays.
    """
    options = options or RenderOptions()
    if cache is None:
        cache = ProjectionCache()
    if not cache.valid_for(cam, options.dtype):
        _build_cache(scene, cam, options, cache)
    return _time_stage(cache, cam, t0, scene.sh_degree, options, want_state)


def project_gaussian(csg: CameraSpaceGaussians, cam: CameraModel, t0: float,
                     options: RenderOptions | None = None):
    """Project pre-transformed camera-space Gaussians at t0.

    Uses exactly the cached-stage + time-stage code path of project_scene.
    Returns (ScreenGaussians, visible_mask); culled Gaussians are simply
    absent from the batch.
    """
    options = options or RenderOptions(dtype=np.float64)
    dtype = options.dtype
    cache = ProjectionCache()
    m_cov, base_uv, izb, vel_pix, mean_rate, z0, zdot = _camera_stage(csg, cam, dtype)
    cache.key = cam.pose_key() + np.dtype(dtype).str.encode()
    cache.act = None
    cache.csg = csg
    cache.m_cov = m_cov
    cache.base_uv = base_uv
    cache.izb = izb
    cache.vel_pix = vel_pix
    cache.mean_rate = mean_rate
    cache.z0 = z0
    cache.zdot = zdot
    cache.cam_center = cam.center.astype(dtype)
    from .scene import sh_degree_from_coeffs
    degree = sh_degree_from_coeffs(csg.sh_coeffs.shape[1])
    screen = _time_stage(cache, cam, t0, degree, options, want_state=False)
    mask = np.zeros(len(csg), bool)
    mask[screen.index] = True
    return screen, mask
