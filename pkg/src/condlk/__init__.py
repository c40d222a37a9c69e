"""Planar image alignment with IC-LK, SDM, Generative LK and Conditional LK."""
from ._accel import backend
from .imageops import (MultiChannelImage, SamplingGrid, default_image_path, finite_diff_gradients,
                       lbp_transform, load_image, sample_bilinear, sample_warped_vector)
from .warp import (WarpFamily, WarpParams, compose, corner_rmse, fit_params_from_points, invert,
                   jacobian_at_identity, warp_point)

__version__ = "0.1.0"
