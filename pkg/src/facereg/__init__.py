"""Facial depth-image to CT-surface rigid registration toolkit."""

from .geometry import (NeighborIndex, PointCloud, RigidTransform,
                       apply_transform, build_index, compose, estimate_rigid,
                       invert)
from .registration import (IcpParams, RegistrationResult, coarse_register,
                           evaluate_rmse, fine_register, icp)

__all__ = [
    "PointCloud", "RigidTransform", "NeighborIndex",
    "build_index", "estimate_rigid", "apply_transform", "compose", "invert",
    "IcpParams", "RegistrationResult", "icp", "coarse_register",
    "fine_register", "evaluate_rmse",
]

__version__ = "0.1.0"
