"""gsworld: a desk-scale hierarchical Gaussian-splatting world model for
bimanual manipulation, built on a differentiable tile-based rasterizer and
a deterministic synthetic two-arm environment."""

__version__ = "0.1.0"
