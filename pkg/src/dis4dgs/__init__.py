"""Disentangled 4D Gaussian splatting engine."""

from .scene import (CameraModel, Gaussian4D, GaussianCloud, Scene4D, SceneError,
                    activate, covariance3d, init_from_points)
from .projection import (CameraSpaceGaussians, ProjectionCache, RenderOptions,
                         ScreenGaussians, jacobian_at, project_gaussian,
                         project_mean, project_scene, project_velocity,
                         to_camera)
from .rasterize import (FrameBuffers, FrameGrads, GradientBuffer, backward,
                        backward_screen, rasterize, render)
from .slicing import Gaussian4DFull, lift, render_slicing_first, slice_at

__version__ = "0.1.0"
