"""Warped products over model spaces: distances, curvature, optimal transport
and curvature-dimension experiments."""

__version__ = "0.1.0"

from .spaces import Circle, FlatTorus, Interval, MinkowskiTorus, ProductSpace, Sphere  # noqa: E402
from .warp import WarpedProduct, k_cone, warped_measure, warping  # noqa: E402
from .geodesics import NonConvergence, distance_matrix, product_distance  # noqa: E402
from .transport import DiscreteMeasure, TransportPlan, cd_check, w2  # noqa: E402

__all__ = ["Circle", "FlatTorus", "Interval", "MinkowskiTorus", "ProductSpace", "Sphere",
           "WarpedProduct", "k_cone", "warped_measure", "warping", "NonConvergence",
           "distance_matrix", "product_distance", "DiscreteMeasure", "TransportPlan", "cd_check", "w2"]
