"""Training losses and image metrics.

Photometric supervision is the usual L1 + D-SSIM mix. The flow-gradient
consistency loss couples discontinuities of the rendered optical flow to
image edges: both gradient-magnitude fields (3x3 Sobel) are max-normalized
and the loss penalizes flow gradients wherever the image is smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d


@dataclass
class LossConfig:
    lambda_dssim: float = 0.2
    lambda_flow: float = 0.01
    epsilon_flow: float = 1e-6
    edge_source: str = "target"   # which image supplies the edge map: target | rendered
    norm_mode: str = "max"        # gradient normalization: max | fixed
    fixed_norm: float = 1.0

    def __post_init__(self):
        if min(self.lambda_dssim, self.lambda_flow, self.epsilon_flow) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.edge_source not in ("target", "rendered"):
            raise ValueError(f"edge_source must be target|rendered, got {self.edge_source!r}")
        if self.norm_mode not in ("max", "fixed"):
            raise ValueError(f"norm_mode must be max|fixed, got {self.norm_mode!r}")


LUMA = np.array([0.299, 0.587, 0.114])

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _conv3x3_edge(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 correlation with replicate padding."""
    fp = np.pad(field, 1, mode="edge")
    h, w = field.shape
    out = np.zeros_like(field)
    for a in range(3):
        for b in range(3):
            out += kernel[a, b] * fp[a:a + h, b:b + w]
    return out


def _conv3x3_edge_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of _conv3x3_edge: scatter back and fold the replicated border."""
    h, w = grad.shape
    gp = np.zeros((h + 2, w + 2), dtype=grad.dtype)
    for a in range(3):
        for b in range(3):
            gp[a:a + h, b:b + w] += kernel[a, b] * grad
    out = gp[1:-1, 1:-1].copy()
    out[0, :] += gp[0, 1:-1]
    out[-1, :] += gp[-1, 1:-1]
    out[:, 0] += gp[1:-1, 0]
    out[:, -1] += gp[1:-1, -1]
    out[0, 0] += gp[0, 0]
    out[0, -1] += gp[0, -1]
    out[-1, 0] += gp[-1, 0]
    out[-1, -1] += gp[-1, -1]
    return out


def flow_magnitude(flow: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Per-pixel flow magnitude sqrt(u^2 + v^2 + eps)."""
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    return np.sqrt(flow[..., 0] ** 2 + flow[..., 1] ** 2 + epsilon)


def _grad_magnitude(field: np.ndarray):
    gx = _conv3x3_edge(field, _SOBEL_X)
    gy = _conv3x3_edge(field, _SOBEL_Y)
    gm = np.sqrt(gx * gx + gy * gy + 1e-24)
    return gm, gx, gy


def _normalized_edge_map(image: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Max-normalized Sobel gradient magnitude of the luminance image."""
    luma = image @ LUMA if image.ndim == 3 else image
    gi, _, _ = _grad_magnitude(luma)
    if cfg.norm_mode == "fixed":
        return np.clip(gi / cfg.fixed_norm, 0.0, 1.0)
    gmax = gi.max()
    if gmax < 1e-8:
        return np.zeros_like(gi)
    return gi / gmax


def flow_gradient_loss(flow: np.ndarray, image: np.ndarray, cfg: LossConfig):
    """Flow-gradient guided consistency loss and its gradient w.r.t. the flow.

    Returns (loss, d_loss/d_flow). No gradient flows into the image.
    """
    if flow.shape[:2] != image.shape[:2]:
        raise ValueError(f"flow {flow.shape[:2]} and image {image.shape[:2]} differ")
    h, w = flow.shape[:2]
    n = h * w
    flow = flow.astype(np.float64)
    m = flow_magnitude(flow, cfg.epsilon_flow)
    gm, gx, gy = _grad_magnitude(m)
    gin = _normalized_edge_map(np.asarray(image, dtype=np.float64), cfg)

    if cfg.norm_mode == "max":
        gmax = gm.max()
        if gmax < 1e-8:
            return 0.0, np.zeros_like(flow)
        gmn = gm / gmax
    else:
        gmax = cfg.fixed_norm
        gmn = np.clip(gm / gmax, 0.0, 1.0)

    weight = 1.0 - gin
    loss = cfg.lambda_flow * float((gmn * weight).mean())

    # backward: through the normalization (max picks up the sum term), the
    # vector norm, the Sobel stencils and the magnitude map
    d_gmn = cfg.lambda_flow * weight / n
    if cfg.norm_mode == "max":
        d_gm = d_gmn / gmax
        flat = np.argmax(gm)
        d_gm.flat[flat] += -(d_gmn * gm).sum() / (gmax * gmax)
    else:
        inside = gm / gmax < 1.0
        d_gm = np.where(inside, d_gmn / gmax, 0.0)
    d_gx = d_gm * gx / gm
    d_gy = d_gm * gy / gm
    d_m = (_conv3x3_edge_adjoint(d_gx, _SOBEL_X)
           + _conv3x3_edge_adjoint(d_gy, _SOBEL_Y))
    d_flow = np.empty_like(flow)
    d_flow[..., 0] = d_m * flow[..., 0] / m
    d_flow[..., 1] = d_m * flow[..., 1] / m
    return loss, d_flow


def flow_edge_misalignment(flow: np.ndarray, image: np.ndarray,
                           cfg: LossConfig | None = None,
                           edge_thresh: float = 0.5) -> float:
    """Mean normalized flow-gradient mass sitting off image edges."""
    cfg = cfg or LossConfig()
    m = flow_magnitude(np.asarray(flow, dtype=np.float64), cfg.epsilon_flow)
    gm, _, _ = _grad_magnitude(m)
    gmax = gm.max()
    if gmax < 1e-8:
        return 0.0
    gmn = gm / gmax
    gin = _normalized_edge_map(np.asarray(image, dtype=np.float64), cfg)
    return float((gmn * (gin < edge_thresh)).mean())


# --- SSIM (11x11 Gaussian window, sigma 1.5) ---

_WIN_SIZE = 11
_SIGMA = 1.5
_offsets = np.arange(_WIN_SIZE) - _WIN_SIZE // 2
_WINDOW1D = np.exp(-(_offsets ** 2) / (2 * _SIGMA ** 2))
_WINDOW1D /= _WINDOW1D.sum()
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, _WINDOW1D, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, _WINDOW1D, axis=1, mode="constant", cval=0.0)


def ssim(x: np.ndarray, y: np.ndarray, want_grad: bool = False):
    """Mean SSIM over pixels and channels (zero-padded window sums).

    With want_grad=True also returns d(mean SSIM)/dx.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    h, w, c = x.shape
    total = 0.0
    grad = np.zeros_like(x) if want_grad else None
    for ch in range(c):
        xc, yc = x[:, :, ch], y[:, :, ch]
        m1 = _blur(xc)
        m2 = _blur(yc)
        p2 = _blur(xc * xc)
        q2 = _blur(xc * yc)
        r2 = _blur(yc * yc)
        sx = p2 - m1 * m1
        sy = r2 - m2 * m2
        sxy = q2 - m1 * m2
        v1 = 2 * m1 * m2 + _C1
        v2 = 2 * sxy + _C2
        v3 = m1 * m1 + m2 * m2 + _C1
        v4 = sx + sy + _C2
        denom = v3 * v4
        s = (v1 * v2) / denom
        total += s.mean()
        if want_grad:
            npix = h * w
            ds = 1.0 / (npix * c)
            d_v = ds * np.ones_like(s)
            # partials w.r.t. the window sums
            d_m1 = d_v * ((2 * m2 * v2 - 2 * m2 * v1) / denom
                          - s / denom * (2 * m1 * v4 - 2 * m1 * v3))
            d_p2 = d_v * (-s / v4)
            d_q2 = d_v * (2 * v1 / denom)
            grad[:, :, ch] = (_blur(d_m1) + 2 * xc * _blur(d_p2) + yc * _blur(d_q2))
    mean = total / c
    if want_grad:
        return mean, grad
    return mean


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     cfg: LossConfig | None = None):
    """(1 - lambda_dssim) * L1 + lambda_dssim * DSSIM, with d/d rendered."""
    cfg = cfg or LossConfig()
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / diff.size
    s, d_s = ssim(rendered, target, want_grad=True)
    dssim = (1.0 - s) / 2.0
    total = (1.0 - cfg.lambda_dssim) * l1 + cfg.lambda_dssim * dssim
    grad = (1.0 - cfg.lambda_dssim) * d_l1 - cfg.lambda_dssim * 0.5 * d_s
    return total, grad, {"l1": l1, "dssim": dssim}


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0,1]; inf if identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
