"""Finite-difference verification of the analytic backward pass."""

import numpy as np
import pytest

from dis4dgs.projection import RenderOptions
from dis4dgs.rasterize import FrameGrads, backward, render
from dis4dgs.scene import Scene4D
from conftest import make_camera, make_cloud

H = W = 16


def _setup(seed, mode="exact", mu_t=None):
    rng = np.random.default_rng(seed)
    cloud = make_cloud(rng, 5, sh_degree=1, mu_t=mu_t)
    cloud.log_s4d[:, :3] = rng.uniform(np.log(0.08), np.log(0.3), (5, 3))
    scene = Scene4D(cloud, background=np.array([0.15, 0.25, 0.35]))
    cam = make_camera(size=H)
    t0 = float(rng.uniform(0.2, 0.8))
    # continuous forward (no binning truncation or alpha cutoffs) so central
    # differences measure the same function the backward differentiates
    opts = RenderOptions(mode=mode, dtype=np.float64, temporal_cutoff=0.0,
                         alpha_skip=0.0, transmittance_floor=0.0,
                         full_extent=True)
    weights = FrameGrads(rng.normal(0, 1, (H, W, 3)), rng.normal(0, 1, (H, W, 2)),
                         rng.normal(0, 1, (H, W)), rng.normal(0, 1, (H, W)))
    return scene, cam, t0, opts, weights


def _loss(scene, cam, t0, opts, wt):
    b = render(scene, cam, t0, options=opts)
    return float((b.color * wt.color).sum() + (b.flow * wt.flow).sum()
                 + (b.depth * wt.depth).sum() + (b.alpha * wt.alpha).sum())


def _check_all(scene, cam, t0, opts, wt, h=1e-4,
               rel_tol=1e-3, abs_tol=1e-6):
    gb = backward(render(scene, cam, t0, options=opts), wt)
    cloud = scene.gaussians
    failures = []
    for name in ("mu4d", "log_s4d", "q", "vel3d", "opacity_logit", "sh_coeffs"):
        arr = getattr(cloud, name)
        grad = getattr(gb, name)
        for flat in range(arr.size):
            idx = np.unravel_index(flat, arr.shape)
            saved = arr[idx]
            arr[idx] = saved + h
            lp = _loss(scene, cam, t0, opts, wt)
            arr[idx] = saved - h
            lm = _loss(scene, cam, t0, opts, wt)
            arr[idx] = saved
            fd = (lp - lm) / (2 * h)
            err = abs(grad[idx] - fd)
            if err > max(abs_tol, rel_tol * abs(fd)):
                failures.append((name, idx, grad[idx], fd))
    assert not failures, failures[:5]


@pytest.mark.parametrize("seed", [0, 1])
def test_exact_mode_gradients(seed):
    _check_all(*_setup(seed, mode="exact"))


def test_fast_mode_gradients():
    _check_all(*_setup(4, mode="fast"))


def test_gradients_at_shared_timestamp():
    # dt = 0 for every Gaussian and no flow supervision: velocity gradients
    # vanish identically (velocity reaches color/depth only through dt terms)
    scene, cam, t0, opts, wt = _setup(7, mu_t=0.5)
    wt.flow[:] = 0.0
    gb = backward(render(scene, cam, 0.5, options=opts), wt)
    assert np.abs(gb.vel3d).max() == 0.0


def test_flow_upstream_reaches_velocity():
    scene, cam, t0, opts, wt = _setup(9)
    wt.color[:] = 0
    wt.depth[:] = 0
    wt.alpha[:] = 0
    gb = backward(render(scene, cam, t0, options=opts), wt)
    assert np.abs(gb.vel3d).max() > 0.0
    _check_all(scene, cam, t0, opts, wt)


def test_density_stats_populated():
    scene, cam, t0, opts, wt = _setup(11)
    gb = backward(render(scene, cam, t0, options=opts), wt)
    assert gb.visible.any()
    assert (gb.screen_grad_norm[gb.visible] >= 0).all()
    assert np.allclose(gb.mu_t_grad_abs, np.abs(gb.mu4d[:, 3]))
