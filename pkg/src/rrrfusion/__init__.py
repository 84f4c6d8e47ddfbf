"""Contact detection for a planar 3-RRR parallel robot with encoder and IMU fusion."""

from .errors import RrrFusionError

__version__ = "0.1.0"

__all__ = ["RrrFusionError", "__version__"]
