"""Cross-modal point cloud completion: a partial scan plus a single rendered
view in, a completed cloud out. Pure numpy forward/backward with optional
numba-accelerated kernels (set CSDN_NO_NUMBA=1 to force the numpy path).
"""

__version__ = "0.1.0"
