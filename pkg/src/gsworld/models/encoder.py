"""Volumetric representation: RGB-D unprojection pooling plus a small dense
3-D convolutional encoder with proprioception injection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..core.cameras import unproject_depth
from ..core.observations import Observation
from ..errors import DegenerateObservationError
from .params import ModelConfig, ModelParams


@dataclass
class VolumetricFeature:
    grid: ad.Tensor          # (G, G, G, F) encoded features
    occupancy: np.ndarray    # (G, G, G) raw unprojected point counts
    workspace_bounds: np.ndarray  # (2, 3) lo / hi

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    @property
    def cell_size(self) -> np.ndarray:
        lo, hi = self.workspace_bounds
        return (hi - lo) / self.grid_size

    def cell_centers(self, flat_indices: np.ndarray) -> np.ndarray:
        """World-space centers of the given flattened cell indices."""
        g = self.grid_size
        iz = flat_indices % g
        iy = (flat_indices // g) % g
        ix = flat_indices // (g * g)
        lo = self.workspace_bounds[0]
        cell = self.cell_size
        idx = np.stack([ix, iy, iz], axis=1).astype(np.float64)
        return lo + (idx + 0.5) * cell

    def world_to_grid(self, positions):
        """Continuous grid coordinates of world positions (cell centers at integers)."""
        lo = ad.constant(self.workspace_bounds[0])
        inv_cell = 1.0 / self.cell_size
        if isinstance(positions, ad.Tensor):
            shifted = ad.sub(positions, ad.constant(np.broadcast_to(
                self.workspace_bounds[0], positions.shape).copy()))
            scaled = ad.mul(shifted, ad.constant(np.broadcast_to(
                inv_cell, positions.shape).copy()))
            return ad.sub(scaled, ad.constant(np.full(positions.shape, 0.5)))
        return (positions - self.workspace_bounds[0]) * inv_cell - 0.5


def pool_observation(obs: Observation, config: ModelConfig, allow_empty: bool = False):
    """Mean-pool unprojected RGB-D points into the workspace grid.

    Returns (pooled (G, G, G, 4) float array with channels [mean rgb, count],
    counts (G, G, G)). Raises DegenerateObservationError when every point
    falls outside the workspace (unless allow_empty).
    """
    g = config.grid_size
    lo, hi = config.workspace_bounds
    cell = (hi - lo) / g
    flat_rgb_sum = np.zeros((g * g * g, 3))
    flat_count = np.zeros(g * g * g)
    kept = 0
    for view in obs.views:
        pts, (rows, cols) = unproject_depth(view.camera, view.depth)
        if pts.shape[0] == 0:
            continue
        idx = np.floor((pts - lo) / cell).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < g), axis=1)
        if not np.any(inside):
            continue
        idx = idx[inside]
        rgb = view.rgb[rows[inside], cols[inside]]
        flat = (idx[:, 0] * g + idx[:, 1]) * g + idx[:, 2]
        kept += flat.size
        flat_count += np.bincount(flat, minlength=g * g * g)
        for c in range(3):
            flat_rgb_sum[:, c] += np.bincount(flat, weights=rgb[:, c], minlength=g * g * g)
    if kept == 0 and not allow_empty:
        raise DegenerateObservationError("no unprojected points landed inside the workspace")
    denom = np.maximum(flat_count, 1.0)
    pooled = np.concatenate([flat_rgb_sum / denom[:, None], flat_count[:, None]], axis=1)
    return pooled.reshape(g, g, g, 4), flat_count.reshape(g, g, g)


def represent(obs: Observation, params: ModelParams,
              allow_empty: bool = False, pooled_cache=None) -> VolumetricFeature:
    """Encode an observation into the volumetric feature grid.

    Pipeline: unprojection pooling, 3x3x3 conv + relu, proprioception
    broadcast-concatenated as channels, then a second 3x3x3 conv.
    `pooled_cache` may carry a precomputed pool_observation result.
    """
    config = params.config
    g = config.grid_size
    if pooled_cache is not None:
        pooled, counts = pooled_cache
    else:
        pooled, counts = pool_observation(obs, config, allow_empty=allow_empty)
    x = ad.constant(pooled)
    h = ad.relu(ad.conv3d(x, params["conv1.w"], params["conv1.b"]))
    proprio = np.asarray(obs.proprio, dtype=np.float64).reshape(-1)
    tile = ad.constant(np.tile(proprio, (g * g * g, 1)))
    h_flat = ad.reshape(h, (g * g * g, config.conv_hidden))
    h_aug = ad.reshape(ad.concat([h_flat, tile], axis=1),
                       (g, g, g, config.conv_hidden + proprio.size))
    grid = ad.conv3d(h_aug, params["conv2.w"], params["conv2.b"])
    return VolumetricFeature(grid=grid, occupancy=counts,
                             workspace_bounds=config.workspace_bounds)
