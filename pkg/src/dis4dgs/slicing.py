"""Slicing-first reference pipeline.

Builds the full 4D covariance of each primitive, conditions it on the
requested timestamp (Schur complement over the time axis) and pushes the
resulting static 3D Gaussians through the standard projection. Every call
recomputes the whole chain; nothing is cached, by construction. Serves as
the correctness oracle and timing baseline for the deferred pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import RenderOptions, ScreenGaussians, jacobian_at
from .rasterize import FrameBuffers, rasterize
from .scene import ActivatedGaussians, CameraModel, Scene4D, activate, covariance3d
from . import sh as shlib


@dataclass
class Gaussian4DFull:
    """4D Gaussians in block form: Sigma_4D = [[U, V], [V^T, W]]."""

    mu4d: np.ndarray      # (N,4)
    U: np.ndarray         # (N,3,3)
    V: np.ndarray         # (N,3)
    W: np.ndarray         # (N,) positive temporal variance
    opacity: np.ndarray   # (N,)
    sh_coeffs: np.ndarray

    def __len__(self) -> int:
        return self.mu4d.shape[0]

    def sigma4d(self) -> np.ndarray:
        n = len(self)
        s = np.empty((n, 4, 4), dtype=self.U.dtype)
        s[:, :3, :3] = self.U
        s[:, :3, 3] = self.V
        s[:, 3, :3] = self.V
        s[:, 3, 3] = self.W
        return s


def lift(act: ActivatedGaussians) -> Gaussian4DFull:
    """Disentangled parameters -> full 4D covariance blocks.

    W = s_t^2, V = vel * W, U = Sigma_3D + vel vel^T W; slicing the result
    reproduces the disentangled quantities exactly.
    """
    sigma3d = covariance3d(act)
    W = act.s_t ** 2
    V = act.vel3d * W[:, None]
    U = sigma3d + np.einsum("ni,nj->nij", act.vel3d, act.vel3d) * W[:, None, None]
    mu4d = np.concatenate([act.mu_xyz, act.mu_t[:, None]], axis=1)
    return Gaussian4DFull(mu4d=mu4d, U=U, V=V, W=W,
                          opacity=act.opacity, sh_coeffs=act.sh_coeffs)


def slice_at(g4: Gaussian4DFull, t: float):
    """Condition on time t: (Sigma_3D, mu_3D(t), temporal factor)."""
    if (g4.W <= 0).any():
        bad = int(np.argwhere(g4.W <= 0)[0][0])
        raise ValueError(f"temporal variance W must be positive (index {bad})")
    inv_w = 1.0 / g4.W
    sigma3d = g4.U - np.einsum("ni,nj->nij", g4.V, g4.V) * inv_w[:, None, None]
    dt = t - g4.mu4d[:, 3]
    mu3d = g4.mu4d[:, :3] + dt[:, None] * (g4.V * inv_w[:, None])
    factor = np.exp(-0.5 * inv_w * dt ** 2)
    return sigma3d, mu3d, factor


def project_static(mu3d: np.ndarray, sigma3d: np.ndarray, opacity: np.ndarray,
                   factor: np.ndarray, sh_coeffs: np.ndarray, sh_degree: int,
                   cam: CameraModel, options: RenderOptions) -> ScreenGaussians:
    """Standard static 3DGS projection of already-sliced Gaussians."""
    dtype = options.dtype
    R = cam.rot_w2c.astype(dtype)
    t = cam.trans_w2c.astype(dtype)
    p = mu3d @ R.T + t

    visible = p[:, 2] >= dtype(cam.near)
    if options.temporal_cutoff > 0:
        visible &= factor >= dtype(options.temporal_cutoff)
    idx = np.nonzero(visible)[0].astype(np.int32)
    p = p[idx]

    m = np.einsum("ij,njk,lk->nil", R, sigma3d[idx], R, optimize=True)
    J = jacobian_at(p, cam.fx, cam.fy).astype(dtype)
    J2 = J[:, :2, :]
    cov2d = np.einsum("nab,nbc,ndc->nad", J2, m, J2)
    A = cov2d[:, 0, 0] + dtype(options.lowpass)
    B = cov2d[:, 0, 1]
    C = cov2d[:, 1, 1] + dtype(options.lowpass)
    det = A * C - B * B
    ok = det > 0
    inv_det = np.where(ok, 1.0 / np.where(det == 0, dtype(1.0), det), dtype(0.0))
    conic = np.stack([C * inv_det, -B * inv_det, A * inv_det], axis=1)
    mid = 0.5 * (A + C)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, dtype(0.1)))
    radius = np.ceil(3.0 * np.sqrt(lam)).astype(np.int32)
    if options.full_extent:
        from .projection import TILE
        radius = np.full_like(radius, cam.width + cam.height + 2 * TILE)

    iz = 1.0 / p[:, 2]
    mean2d = np.stack([dtype(cam.fx) * p[:, 0] * iz + dtype(cam.cx),
                       dtype(cam.fy) * p[:, 1] * iz + dtype(cam.cy)], axis=1)
    depth = np.sqrt(np.einsum("ni,ni->n", p, p))

    u_vec = mu3d[idx] - cam.center.astype(dtype)
    dlen = np.sqrt(np.einsum("ni,ni->n", u_vec, u_vec))
    dirs = u_vec / np.where(dlen == 0, dtype(1.0), dlen)[:, None]
    color, _, _ = shlib.eval_color(sh_coeffs[idx], dirs, sh_degree)

    if not ok.all():
        keep = np.nonzero(ok)[0]
        idx = idx[keep]
        mean2d, depth, conic, radius = mean2d[keep], depth[keep], conic[keep], radius[keep]
        color = color[keep]

    return ScreenGaussians(
        index=idx, mean2d=mean2d, depth=depth, conic=conic,
        vel2d=np.zeros((len(idx), 2), dtype=dtype),
        temporal_weight=factor[idx], opacity=opacity[idx],
        color=color, radius=radius)


def render_slicing_first(scene: Scene4D, cam: CameraModel, t0: float,
                         options: RenderOptions | None = None) -> FrameBuffers:
    """lift -> slice at t0 -> static projection -> shared rasterizer."""
    options = options or RenderOptions(dtype=np.float64)
    dtype = options.dtype
    act = activate(scene.gaussians.astype(dtype))
    g4 = lift(act)
    sigma3d, mu3d, factor = slice_at(g4, dtype(t0))
    screen = project_static(mu3d, sigma3d, act.opacity, factor.astype(dtype),
                            act.sh_coeffs, scene.sh_degree, cam, options)
    return rasterize(screen, cam, scene.background, options)


# --- SO(4) double-quaternion factorization (16-float baseline layout) ---

def _lmat(p: np.ndarray) -> np.ndarray:
    w, x, y, z = p
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def _rmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([[w, -x, -y, -z],
                     [x, w, z, -y],
                     [y, -z, w, x],
                     [z, y, -x, w]])


_EYE4 = np.eye(4)
_LBASIS = np.stack([_lmat(_EYE4[a]) for a in range(4)])
_RBASIS = np.stack([_rmat(_EYE4[b]) for b in range(4)])


def so4_to_double_quaternion(Q: np.ndarray):
    """Factor a 4D rotation into left/right unit quaternions, Q = L(p) R(q)."""
    K = np.empty((4, 4))
    for a in range(4):
        for b in range(4):
            K[a, b] = 0.25 * np.sum(Q * (_LBASIS[a] @ _RBASIS[b]))
    u, s, vt = np.linalg.svd(K)
    p = u[:, 0] * np.sqrt(s[0])
    q = vt[0] * np.sqrt(s[0])
    # normalize away residual scale
    p /= np.linalg.norm(p)
    q /= np.linalg.norm(q)
    return p, q


def double_quaternion_to_so4(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return _lmat(p) @ _rmat(q)


def full_parameterization(act: ActivatedGaussians):
    """Full 4D-covariance parameters: 4D mean, 4D log scales, 8 rotation floats.

    This is the 16-float geometry+motion layout the slicing-first baseline
    serializes; used by the storage comparison.
    """
    g4 = lift(act)
    sig = g4.sigma4d()
    evals, evecs = np.linalg.eigh(sig)
    evals = np.maximum(evals, 1e-30)
    n = len(g4)
    scales = np.sqrt(evals)
    rot_l = np.empty((n, 4))
    rot_r = np.empty((n, 4))
    for i in range(n):
        Q = evecs[i]
        if np.linalg.det(Q) < 0:
            Q = Q.copy()
            Q[:, 0] = -Q[:, 0]
        p, q = so4_to_double_quaternion(Q)
        rot_l[i] = p
        rot_r[i] = q
    return g4.mu4d, np.log(scales), rot_l, rot_r
