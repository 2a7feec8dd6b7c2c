"""Reference-guided stylization of voxel radiance fields.

Core pieces: volume rendering with analytic gradients (render), photometric
fitting (fit), reference ray registration (registration), template-based
feature correspondence (features), the three-loss stylizer (stylize), and
evaluation metrics (metrics). The service subpackage wraps everything in a
FastAPI app; the CLI is a thin client over the same handlers.
"""

__version__ = "0.1.0"
