"""Real spherical harmonics for view-dependent color, degrees 0..3.

Colors are stored as SH coefficients; the rendered RGB is clamp(SH(dir)+0.5, 0)
per channel, with `dir` the unit vector from the camera center to the
primitive. Basis constants match the usual real-SH normalization.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def rgb_to_sh_dc(rgb: np.ndarray) -> np.ndarray:
    """RGB in [0,1] -> DC coefficient such that clamp(SH+0.5) reproduces it."""
    return (np.asarray(rgb) - 0.5) / C0


def sh_dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    return np.asarray(dc) * C0 + 0.5


def eval_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis functions at unit directions; (N,3) -> (N,(degree+1)^2)."""
    d = np.asarray(dirs)
    n = d.shape[0]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    k = (degree + 1) ** 2
    b = np.empty((n, k), dtype=d.dtype)
    b[:, 0] = C0
    if degree >= 1:
        b[:, 1] = -C1 * y
        b[:, 2] = C1 * z
        b[:, 3] = -C1 * x
    if degree >= 2:
        b[:, 4] = C2[0] * x * y
        b[:, 5] = C2[1] * y * z
        b[:, 6] = C2[2] * (2 * z * z - x * x - y * y)
        b[:, 7] = C2[3] * x * z
        b[:, 8] = C2[4] * (x * x - y * y)
    if degree >= 3:
        b[:, 9] = C3[0] * y * (3 * x * x - y * y)
        b[:, 10] = C3[1] * x * y * z
        b[:, 11] = C3[2] * y * (4 * z * z - x * x - y * y)
        b[:, 12] = C3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y)
        b[:, 13] = C3[4] * x * (4 * z * z - x * x - y * y)
        b[:, 14] = C3[5] * z * (x * x - y * y)
        b[:, 15] = C3[6] * x * (x * x - 3 * y * y)
    return b


def eval_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(dir) for unnormalized direction components; (N,K,3)."""
    d = np.asarray(dirs)
    n = d.shape[0]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    k = (degree + 1) ** 2
    g = np.zeros((n, k, 3), dtype=d.dtype)
    if degree >= 1:
        g[:, 1, 1] = -C1
        g[:, 2, 2] = C1
        g[:, 3, 0] = -C1
    if degree >= 2:
        g[:, 4, 0] = C2[0] * y
        g[:, 4, 1] = C2[0] * x
        g[:, 5, 1] = C2[1] * z
        g[:, 5, 2] = C2[1] * y
        g[:, 6, 0] = C2[2] * (-2 * x)
        g[:, 6, 1] = C2[2] * (-2 * y)
        g[:, 6, 2] = C2[2] * (4 * z)
        g[:, 7, 0] = C2[3] * z
        g[:, 7, 2] = C2[3] * x
        g[:, 8, 0] = C2[4] * (2 * x)
        g[:, 8, 1] = C2[4] * (-2 * y)
    if degree >= 3:
        g[:, 9, 0] = C3[0] * 6 * x * y
        g[:, 9, 1] = C3[0] * (3 * x * x - 3 * y * y)
        g[:, 10, 0] = C3[1] * y * z
        g[:, 10, 1] = C3[1] * x * z
        g[:, 10, 2] = C3[1] * x * y
        g[:, 11, 0] = C3[2] * (-2 * x * y)
        g[:, 11, 1] = C3[2] * (4 * z * z - x * x - 3 * y * y)
        g[:, 11, 2] = C3[2] * (8 * y * z)
        g[:, 12, 0] = C3[3] * (-6 * x * z)
        g[:, 12, 1] = C3[3] * (-6 * y * z)
        g[:, 12, 2] = C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)
        g[:, 13, 0] = C3[4] * (4 * z * z - 3 * x * x - y * y)
        g[:, 13, 1] = C3[4] * (-2 * x * y)
        g[:, 13, 2] = C3[4] * (8 * x * z)
        g[:, 14, 0] = C3[5] * (2 * x * z)
        g[:, 14, 1] = C3[5] * (-2 * y * z)
        g[:, 14, 2] = C3[5] * (x * x - y * y)
        g[:, 15, 0] = C3[6] * (3 * x * x - 3 * y * y)
        g[:, 15, 1] = C3[6] * (-6 * x * y)
    return g


def eval_color(coeffs: np.ndarray, dirs: np.ndarray, degree: int | None = None):
    """Evaluate clamped SH color.

    Returns (color (N,3), basis (N,K), clamp_mask (N,3)); basis and mask are
    reused by the backward pass.
    """
    if degree is None:
        from .scene import sh_degree_from_coeffs
        degree = sh_degree_from_coeffs(coeffs.shape[1])
    basis = eval_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", basis, coeffs[:, : basis.shape[1], :]) + 0.5
    clamp_mask = raw > 0.0
    return np.where(clamp_mask, raw, 0.0), basis, clamp_mask


def backward_color(coeffs: np.ndarray, dirs: np.ndarray, basis: np.ndarray,
                   clamp_mask: np.ndarray, d_color: np.ndarray, degree: int):
    """Gradients of the clamped SH color.

    Returns (d_coeffs (N,K,3), d_dirs (N,3)) where d_dirs is w.r.t. the *unit*
    direction components (the projection onto the sphere happens upstream).
    """
    d_raw = np.where(clamp_mask, d_color, 0.0)  # (N,3)
    d_coeffs = basis[:, :, None] * d_raw[:, None, :]  # (N,K,3)
    bgrad = eval_basis_grad(dirs, degree)  # (N,K,3 dir comps)
    # d_raw/d_dir = sum_k coeffs[k,c] * dbasis[k]/ddir
    d_dirs = np.einsum("nc,nkc,nkd->nd", d_raw, coeffs[:, : basis.shape[1], :], bgrad)
    return d_coeffs, d_dirs
