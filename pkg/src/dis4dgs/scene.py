"""Disentangled 4D Gaussian scene representation.

Each primitive carries a 4D mean (xyz + normalized time), log-stored 4D
scales, an unnormalized quaternion for the spatial rotation, a 3D velocity
of the spatial mean, an opacity logit and SH color coefficients. Geometry
plus motion is exactly 15 floats per Gaussian (4 + 4 + 4 + 3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# geometry + motion floats per Gaussian: mu4d(4) + log_s4d(4) + q(4) + vel3d(3)
GEOMETRY_FLOATS = 15


class SceneError(ValueError):
    """Raised for invalid scene parameters or malformed scene files."""


def num_sh_coeffs(degree: int) -> int:
    if degree not in (0, 1, 2, 3):
        raise SceneError(f"sh_degree must be in [0,3], got {degree}")
    return (degree + 1) ** 2


def sh_degree_from_coeffs(n_coeffs: int) -> int:
    for deg in range(4):
        if (deg + 1) ** 2 == n_coeffs:
            return deg
    raise SceneError(f"coefficient count {n_coeffs} is not (deg+1)^2 for deg in [0,3]")


@dataclass
class GaussianCloud:
    """Struct-of-arrays container for N disentangled 4D Gaussians."""

    mu4d: np.ndarray          # (N,4) spatial mean + temporal mean
    log_s4d: np.ndarray       # (N,4) log scales, last entry is log s_t
    q: np.ndarray             # (N,4) quaternion (w,x,y,z), normalized on use
    vel3d: np.ndarray         # (N,3) velocity of the spatial mean
    opacity_logit: np.ndarray  # (N,)
    sh_coeffs: np.ndarray     # (N,K,3), K=(deg+1)^2

    def __post_init__(self):
        n = self.mu4d.shape[0]
        shapes = {
            "mu4d": (n, 4), "log_s4d": (n, 4), "q": (n, 4),
            "vel3d": (n, 3), "opacity_logit": (n,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise SceneError(f"{name} has shape {got}, expected {want}")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise SceneError(f"sh_coeffs has shape {self.sh_coeffs.shape}, expected ({n},K,3)")
        sh_degree_from_coeffs(self.sh_coeffs.shape[1])

    def __len__(self) -> int:
        return self.mu4d.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_coeffs(self.sh_coeffs.shape[1])

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(
            self.mu4d.astype(dtype), self.log_s4d.astype(dtype),
            self.q.astype(dtype), self.vel3d.astype(dtype),
            self.opacity_logit.astype(dtype), self.sh_coeffs.astype(dtype))

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.mu4d.copy(), self.log_s4d.copy(), self.q.copy(),
            self.vel3d.copy(), self.opacity_logit.copy(), self.sh_coeffs.copy())

    def select(self, mask_or_index) -> "GaussianCloud":
        return GaussianCloud(
            self.mu4d[mask_or_index], self.log_s4d[mask_or_index],
            self.q[mask_or_index], self.vel3d[mask_or_index],
            self.opacity_logit[mask_or_index], self.sh_coeffs[mask_or_index])

    def __getitem__(self, i: int) -> "Gaussian4D":
        return Gaussian4D(
            mu4d=self.mu4d[i], log_s4d=self.log_s4d[i], q=self.q[i],
            vel3d=self.vel3d[i], opacity_logit=float(self.opacity_logit[i]),
            sh_coeffs=self.sh_coeffs[i])

    @staticmethod
    def concatenate(parts: list["GaussianCloud"]) -> "GaussianCloud":
        return GaussianCloud(
            np.concatenate([p.mu4d for p in parts]),
            np.concatenate([p.log_s4d for p in parts]),
            np.concatenate([p.q for p in parts]),
            np.concatenate([p.vel3d for p in parts]),
            np.concatenate([p.opacity_logit for p in parts]),
            np.concatenate([p.sh_coeffs for p in parts]))

    @staticmethod
    def empty(sh_degree: int = 0, dtype=np.float32) -> "GaussianCloud":
        k = num_sh_coeffs(sh_degree)
        return GaussianCloud(
            np.zeros((0, 4), dtype), np.zeros((0, 4), dtype), np.zeros((0, 4), dtype),
            np.zeros((0, 3), dtype), np.zeros((0,), dtype), np.zeros((0, k, 3), dtype))


@dataclass
class Gaussian4D:
    """Single-primitive view, mostly for tests and debugging."""

    mu4d: np.ndarray
    log_s4d: np.ndarray
    q: np.ndarray
    vel3d: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray


@dataclass
class Scene4D:
    gaussians: GaussianCloud
    duration_seconds: float = 1.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.background.shape != (3,):
            raise SceneError("background must be a 3-vector")
        if not (0.0 <= self.background.min() and self.background.max() <= 1.0):
            raise SceneError("background components must lie in [0,1]")
        if self.duration_seconds <= 0:
            raise SceneError("duration_seconds must be positive")

    @property
    def sh_degree(self) -> int:
        return self.gaussians.sh_degree

    def __len__(self) -> int:
        return len(self.gaussians)


@dataclass
class CameraModel:
    """Pinhole camera with a world-to-camera rigid transform (camera looks +z)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rot_w2c: np.ndarray    # (3,3) row-major, orthonormal
    trans_w2c: np.ndarray  # (3,)
    near: float = 0.01
    time: float | None = None  # normalized timestamp when the camera is a dataset frame

    def __post_init__(self):
        self.rot_w2c = np.asarray(self.rot_w2c, dtype=np.float64).reshape(3, 3)
        self.trans_w2c = np.asarray(self.trans_w2c, dtype=np.float64).reshape(3)
        if min(self.width, self.height) <= 0 or min(self.fx, self.fy) <= 0:
            raise SceneError("width, height, fx, fy must be positive")
        if self.near <= 0:
            raise SceneError("near must be positive")
        err = np.abs(self.rot_w2c.T @ self.rot_w2c - np.eye(3)).max()
        if err > 1e-6:
            raise SceneError(f"rot_w2c is not orthonormal (max |R^T R - I| = {err:.3g})")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rot_w2c.T @ self.trans_w2c

    def pose_key(self) -> bytes:
        """Identity of everything the cached camera stage depends on."""
        return (self.rot_w2c.tobytes() + self.trans_w2c.tobytes()
                + np.float64([self.fx, self.fy, self.cx, self.cy, self.near]).tobytes()
                + np.int64([self.width, self.height]).tobytes())


@dataclass
class ActivatedGaussians:
    """Per-Gaussian parameters after activation (batch form)."""

    mu_xyz: np.ndarray   # (N,3)
    mu_t: np.ndarray     # (N,)
    s_xyz: np.ndarray    # (N,3) strictly positive
    s_t: np.ndarray      # (N,)  strictly positive
    q_unit: np.ndarray   # (N,4) unit quaternion
    q_norm: np.ndarray   # (N,) norm of the raw quaternion, kept for backward
    vel3d: np.ndarray    # (N,3)
    opacity: np.ndarray  # (N,) in (0,1)
    sh_coeffs: np.ndarray  # (N,K,3) passed through

    def __len__(self) -> int:
        return self.mu_xyz.shape[0]


def _first_nonfinite(arr: np.ndarray) -> tuple[int, ...] | None:
    bad = ~np.isfinite(arr)
    if bad.any():
        return tuple(int(v) for v in np.argwhere(bad)[0])
    return None


def activate(cloud: GaussianCloud) -> ActivatedGaussians:
    """Apply activations: exp on scales, sigmoid on opacity, normalize quaternions."""
    for name in ("mu4d", "log_s4d", "q", "vel3d", "opacity_logit", "sh_coeffs"):
        idx = _first_nonfinite(getattr(cloud, name))
        if idx is not None:
            raise SceneError(f"non-finite value in {name} at index {idx}")
    s4d = np.exp(cloud.log_s4d)
    norm = np.linalg.norm(cloud.q, axis=1, keepdims=True)
    if (norm == 0).any():
        i = int(np.argwhere(norm[:, 0] == 0)[0][0])
        raise SceneError(f"zero quaternion at index ({i},)")
    q_unit = cloud.q / norm
    opacity = 1.0 / (1.0 + np.exp(-cloud.opacity_logit))
    return ActivatedGaussians(
        mu_xyz=cloud.mu4d[:, :3], mu_t=cloud.mu4d[:, 3],
        s_xyz=s4d[:, :3], s_t=s4d[:, 3], q_unit=q_unit, q_norm=norm[:, 0],
        vel3d=cloud.vel3d, opacity=opacity, sh_coeffs=cloud.sh_coeffs)


def quat_to_rotmat(q_unit: np.ndarray) -> np.ndarray:
    """(...,4) unit quaternion (w,x,y,z) -> (...,3,3) rotation matrix."""
    q = np.asarray(q_unit)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(act: ActivatedGaussians) -> np.ndarray:
    """Spatial covariance of the base 3D Gaussian: R S S^T R^T, shape (N,3,3)."""
    R = quat_to_rotmat(act.q_unit)
    RS = R * act.s_xyz[:, None, :]
    return RS @ np.swapaxes(RS, 1, 2)


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """(3,3) rotation matrix -> unit quaternion (w,x,y,z)."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        return np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                         (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    i = int(np.argmax(np.diag(R)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
    q = np.empty(4)
    q[0] = (R[k, j] - R[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (R[j, i] + R[i, j]) / s
    q[1 + k] = (R[k, i] + R[i, k]) / s
    return q


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def init_from_points(points: np.ndarray, colors: np.ndarray | None = None,
                     sh_degree: int = 3, duration_seconds: float = 1.0,
                     background=(0.0, 0.0, 0.0), seed: int = 0,
                     dtype=np.float64) -> Scene4D:
    """Seed a trainable scene from a point cloud.

    Spatial means come from the points; temporal means are spread uniformly
    over [0,1]; s_t starts at 1.0 so every primitive initially spans the whole
    sequence; velocities start at zero and rotations at identity. Spatial
    scales are set from the mean nearest-neighbor distance.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise SceneError("point cloud is empty")
    rng = np.random.default_rng(seed)

    # mean distance to the nearest other point, clamped away from zero
    from scipy.spatial import cKDTree
    if n > 1:
        d, _ = cKDTree(points).query(points, k=2)
        nn = np.maximum(d[:, 1], 1e-7)
    else:
        nn = np.full(n, 0.1)

    k = num_sh_coeffs(sh_degree)
    mu4d = np.concatenate([points, rng.uniform(0.0, 1.0, (n, 1))], axis=1)
    log_s4d = np.concatenate([np.tile(np.log(nn)[:, None], (1, 3)), np.zeros((n, 1))], axis=1)
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    sh = np.zeros((n, k, 3))
    if colors is not None:
        from .sh import rgb_to_sh_dc
        sh[:, 0, :] = rgb_to_sh_dc(np.asarray(colors, dtype=np.float64))
    cloud = GaussianCloud(
        mu4d=mu4d.astype(dtype), log_s4d=log_s4d.astype(dtype), q=q.astype(dtype),
        vel3d=np.zeros((n, 3), dtype), opacity_logit=np.full(n, logit(0.1), dtype),
        sh_coeffs=sh.astype(dtype))
    return Scene4D(cloud, duration_seconds=duration_seconds, background=np.asarray(background))
