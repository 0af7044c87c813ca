import numpy as np

from dis4dgs.projection import (ProjectionCache, RenderOptions, jacobian_at,
                                project_gaussian, project_mean, project_scene,
                                project_velocity, to_camera)
from dis4dgs.scene import CameraModel, activate
from dis4dgs.rasterize import render
from conftest import make_camera, make_scene

F64 = dict(dtype=np.float64, temporal_cutoff=0.0)


def test_to_camera_identity(small_scene):
    cam = CameraModel(fx=10, fy=10, cx=5, cy=5, width=10, height=10,
                      rot_w2c=np.eye(3), trans_w2c=np.zeros(3))
    act = activate(small_scene.gaussians)
    csg = to_camera(act, cam)
    assert np.allclose(csg.p3d, act.mu_xyz)
    assert np.allclose(csg.v_view, act.vel3d)
    assert np.allclose(csg.p_t, act.mu_t)


def test_to_camera_rotation_translation():
    # 90 degrees about z: x -> y; translation moves the mean but not velocity
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    cam = CameraModel(fx=10, fy=10, cx=5, cy=5, width=10, height=10,
                      rot_w2c=rot, trans_w2c=np.array([5.0, 0.0, 0.0]))
    scene = make_scene(n=1)
    scene.gaussians.vel3d[0] = [1.0, 0.0, 0.0]
    scene.gaussians.mu4d[0, :3] = [0.0, 0.0, 0.0]
    csg = to_camera(activate(scene.gaussians), cam)
    assert np.allclose(csg.v_view[0], [0.0, 1.0, 0.0])
    assert np.allclose(csg.p3d[0], [5.0, 0.0, 0.0])


def test_to_camera_homogeneous_oracle(rng):
    # general pose: means via a 4x4 homogeneous transform, velocities as
    # directions (w=0)
    scene = make_scene(seed=9, n=12)
    cam = make_camera(angle=0.7)
    act = activate(scene.gaussians)
    csg = to_camera(act, cam)
    T = np.eye(4)
    T[:3, :3] = cam.rot_w2c
    T[:3, 3] = cam.trans_w2c
    mu_h = np.concatenate([act.mu_xyz, np.ones((12, 1))], axis=1)
    v_h = np.concatenate([act.vel3d, np.zeros((12, 1))], axis=1)
    assert np.allclose(csg.p3d, (mu_h @ T.T)[:, :3], atol=1e-12)
    assert np.allclose(csg.v_view, (v_h @ T.T)[:, :3], atol=1e-12)


def test_project_mean_examples():
    x0, y0, z0, ok = project_mean(np.array([0.0, 0.0, 2.0]))
    assert (x0[0], y0[0], z0[0]) == (0.0, 0.0, 2.0)
    x0, y0, z0, ok = project_mean(np.array([2.0, 4.0, 2.0]))
    assert np.allclose([x0[0], y0[0], z0[0]], [1.0, 2.0, np.sqrt(24.0)])
    _, _, _, ok = project_mean(np.array([0.0, 0.0, 0.001]), near=0.01)
    assert not ok[0]


def test_project_velocity_examples():
    v0, v1, v2 = project_velocity(np.array([1.0, 0, 0]), np.array([0, 0, 2.0]))
    assert np.allclose([v0[0], v1[0], v2[0]], [0.5, 0.0, 1.0])
    v0, v1, v2 = project_velocity(np.zeros(3), np.array([0, 0, 2.0]))
    assert v0[0] == v1[0] == v2[0] == 0.0
    v0, v1, v2 = project_velocity(np.array([0.0, 3.0, 4.0]), np.array([0, 0, 2.0]))
    assert np.allclose([v0[0], v1[0], v2[0]], [0.0, 1.5, 5.0])


def test_jacobian_identity_point():
    J = jacobian_at(np.array([0.0, 0.0, 1.0]))
    assert np.allclose(J, np.eye(3))


def test_jacobian_finite_difference_oracle(rng):
    # every row of J matches central differences of the ray-space map
    for _ in range(20):
        p = rng.normal(0, 1, 3)
        p[2] = rng.uniform(0.5, 4.0)
        J = jacobian_at(p)
        h = 1e-6
        for col in range(3):
            dp = np.zeros(3)
            dp[col] = h
            xp = np.array(project_mean(p + dp)[:3]).ravel()
            xm = np.array(project_mean(p - dp)[:3]).ravel()
            fd = (xp - xm) / (2 * h)
            assert np.allclose(J[:, col], fd, rtol=1e-5, atol=1e-8)


def test_jacobian_static_matches_shifted_at_dt_zero(rng):
    p = np.array([0.3, -0.2, 2.0])
    v = np.array([0.5, 0.1, -0.2])
    assert np.array_equal(jacobian_at(p + 0.0 * v), jacobian_at(p))


def test_temporal_weight_values():
    scene = make_scene(seed=5, n=4, mu_t=0.5)
    scene.gaussians.log_s4d[:, 3] = np.log(0.2)
    cam = make_camera()
    opts = RenderOptions(**F64)
    s = project_scene(scene, cam, 0.5, options=opts)
    assert np.allclose(s.temporal_weight, 1.0)
    s = project_scene(scene, cam, 0.7, options=opts)  # |dt| = s_t
    assert np.allclose(s.temporal_weight, np.exp(-0.5))


def test_zero_velocity_matches_static(rng):
    # static scene: s_t large enough that the temporal weight rounds to 1.0
    scene = make_scene(seed=7, n=24)
    scene.gaussians.vel3d[:] = 0.0
    scene.gaussians.log_s4d[:, 3] = np.log(1e9)
    cam = make_camera()
    opts = RenderOptions(**F64)
    a = render(scene, cam, 0.0, options=opts)
    b = render(scene, cam, 1.0, options=opts)
    assert np.array_equal(a.color, b.color)


def test_screen_velocity_pixel_units(rng):
    scene = make_scene(seed=11, n=8)
    cam = make_camera()
    opts = RenderOptions(**F64)
    s, state = project_scene(scene, cam, 0.3, options=opts, want_state=True)
    act = activate(scene.gaussians)
    csg = to_camera(act, cam)
    v0, v1, _ = project_velocity(csg.v_view[s.index], csg.p3d[s.index])
    assert np.allclose(s.vel2d[:, 0], cam.fx * v0, rtol=1e-12)
    assert np.allclose(s.vel2d[:, 1], cam.fy * v1, rtol=1e-12)


def test_conic_psd(rng):
    scene = make_scene(seed=13, n=64)
    cam = make_camera()
    for t0 in (0.0, 0.3, 0.9):
        s = project_scene(scene, cam, t0, options=RenderOptions(**F64))
        a, b, c = s.conic[:, 0], s.conic[:, 1], s.conic[:, 2]
        assert np.all(a > 0) and np.all(c > 0) and np.all(a * c - b * b > 0)


def test_cache_reused_and_invalidated(small_scene, camera):
    cache = ProjectionCache()
    opts = RenderOptions(**F64)
    project_scene(small_scene, camera, 0.1, cache=cache, options=opts)
    project_scene(small_scene, camera, 0.9, cache=cache, options=opts)
    assert cache.n_builds == 1  # camera stage ran once for both timestamps
    cam2 = make_camera(angle=0.3)
    project_scene(small_scene, cam2, 0.5, cache=cache, options=opts)
    assert cache.n_builds == 2


def test_cache_transparency(small_scene, camera):
    # cached vs fresh-cache results are bitwise identical
    opts = RenderOptions(**F64)
    cache = ProjectionCache()
    project_scene(small_scene, camera, 0.2, cache=cache, options=opts)
    with_cache = render(small_scene, camera, 0.8, options=opts, cache=cache)
    without = render(small_scene, camera, 0.8, options=opts)
    assert np.array_equal(with_cache.color, without.color)
    assert np.array_equal(with_cache.flow, without.flow)
    assert np.array_equal(with_cache.depth, without.depth)


def test_empty_scene(camera):
    scene = make_scene(n=1)
    scene.gaussians = scene.gaussians.select(np.zeros(1, dtype=bool))
    s = project_scene(scene, camera, 0.5, options=RenderOptions(**F64))
    assert len(s) == 0


def test_temporal_cutoff_culls():
    scene = make_scene(seed=5, n=8, mu_t=0.0)
    scene.gaussians.log_s4d[:, 3] = np.log(0.05)
    cam = make_camera()
    far = project_scene(scene, cam, 1.0,
                        options=RenderOptions(dtype=np.float64, temporal_cutoff=1 / 255))
    assert len(far) == 0
    kept = project_scene(scene, cam, 1.0,
                         options=RenderOptions(dtype=np.float64, temporal_cutoff=0.0))
    assert len(kept) == 8


def test_near_plane_culling():
    scene = make_scene(seed=5, n=2, mu_t=0.5)
    scene.gaussians.mu4d[0, :3] = [0.0, 0.0, -3.5]   # behind the camera plane
    scene.gaussians.mu4d[1, :3] = [0.0, 0.0, 0.0]
    scene.gaussians.vel3d[:] = 0.0
    cam = make_camera()  # camera sits at z=-3 looking at +z
    s = project_scene(scene, cam, 0.5, options=RenderOptions(**F64))
    assert s.index.tolist() == [1]


def test_project_gaussian_matches_scene_path(small_scene, camera):
    act = activate(small_scene.gaussians.astype(np.float64))
    csg = to_camera(act, camera)
    opts = RenderOptions(**F64)
    direct, mask = project_gaussian(csg, camera, 0.4, options=opts)
    via_scene = project_scene(small_scene, camera, 0.4, options=opts)
    assert np.array_equal(direct.index, via_scene.index)
    assert np.allclose(direct.mean2d, via_scene.mean2d, atol=1e-12)
    assert np.allclose(direct.conic, via_scene.conic, atol=1e-12)
    assert mask.sum() == len(via_scene)


def test_fast_mode_quadratic_convergence():
    scene = make_scene(seed=21, n=48, mu_t=0.5, max_vel=0.5)
    cam = make_camera()
    def opts(mode):
        return RenderOptions(mode=mode, dtype=np.float64, temporal_cutoff=0.0,
                             alpha_skip=0.0, transmittance_floor=0.0)
    errs = []
    for dt in (0.2, 0.1, 0.05):
        e = render(scene, cam, 0.5 + dt, options=opts("exact"))
        f = render(scene, cam, 0.5 + dt, options=opts("fast"))
        errs.append(np.abs(e.color - f.color).max())
    assert errs[1] <= errs[0] / 3.0
    assert errs[2] <= errs[1] / 3.0
    e = render(scene, cam, 0.5, options=opts("exact"))
    f = render(scene, cam, 0.5, options=opts("fast"))
    assert np.abs(e.color - f.color).max() <= 1e-6
