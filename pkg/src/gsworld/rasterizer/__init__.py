"""Differentiable tile-based splatting of Gaussian sets."""

from .projection import (
    DEFAULT_RASTER_CONFIG,
    RasterConfig,
    Splat2D,
    project_gaussian,
    project_gaussians,
)
from .rasterize import GaussianGrads, RenderOutput, render, render_backward, render_brute_force
