import numpy as np
import pytest

from dis4dgs.scene import CameraModel, GaussianCloud, Scene4D


def make_cloud(rng, n, sh_degree=1, mu_t=None, max_vel=0.3):
    """Random but well-conditioned Gaussians in front of the default camera."""
    k = (sh_degree + 1) ** 2
    mu_t_col = (np.full((n, 1), mu_t) if mu_t is not None
                else rng.uniform(0.0, 1.0, (n, 1)))
    return GaussianCloud(
        mu4d=np.concatenate([rng.normal(0.0, 0.4, (n, 3)), mu_t_col], axis=1),
        log_s4d=np.concatenate(
            [rng.uniform(np.log(0.03), np.log(0.15), (n, 3)),
             rng.uniform(np.log(0.25), np.log(1.0), (n, 1))], axis=1),
        q=rng.normal(0.0, 1.0, (n, 4)),
        vel3d=rng.normal(0.0, max_vel, (n, 3)),
        opacity_logit=rng.uniform(-2.0, 2.0, n),
        sh_coeffs=rng.normal(0.0, 0.3, (n, k, 3)))


def make_scene(seed=0, n=32, sh_degree=1, mu_t=None, max_vel=0.3,
               background=(0.1, 0.2, 0.3)):
    rng = np.random.default_rng(seed)
    return Scene4D(make_cloud(rng, n, sh_degree, mu_t, max_vel),
                   background=np.asarray(background))


def make_camera(size=64, fov=55.0, dist=3.0, angle=0.0):
    f = 0.5 * size / np.tan(np.radians(fov) / 2)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    pos = np.array([dist * s, 0.0, -dist * c])
    return CameraModel(fx=f, fy=f, cx=size / 2, cy=size / 2, width=size,
                       height=size, rot_w2c=rot, trans_w2c=-rot @ pos)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene():
    return make_scene(seed=3, n=24)


@pytest.fixture
def camera():
    return make_camera()
