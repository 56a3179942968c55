"""Feed-forward Gaussian regressor: one particle per occupied grid cell."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..core.gaussians import GaussianSet
from ..errors import EmptySceneError
from .encoder import VolumetricFeature
from .params import ModelParams

OCCUPANCY_THRESHOLD = 0.5
IDENTITY_QUAT_ROW = np.array([1.0, 0.0, 0.0, 0.0])


def occupied_cells(v: VolumetricFeature) -> np.ndarray:
    """Flat indices of grid cells whose raw point count exceeds the threshold."""
    return np.nonzero(v.occupancy.reshape(-1) > OCCUPANCY_THRESHOLD)[0]


def regress_gaussians(v: VolumetricFeature, params: ModelParams,
                      timestamp: int = 0) -> GaussianSet:
    """Map per-cell features to Gaussian parameters.

    Per occupied cell, a shared two-layer perceptron emits a position offset
    (tanh, bounded to half a cell around the cell center), sigmoid color,
    a normalized quaternion (identity-biased), softplus scale with an
    additive floor, sigmoid opacity, and raw instance logits.
    """
    config = params.config
    g = config.grid_size
    occ = occupied_cells(v)
    if occ.size == 0:
        raise EmptySceneError("no occupied cells in the volumetric grid")
    feats = ad.gather_rows(ad.reshape(v.grid, (g * g * g, config.feature_width)), occ)
    if not np.all(np.isfinite(feats.data)):
        raise ValueError("non-finite volumetric features at occupied cells")
    h = ad.relu(ad.add_rowvec(ad.matmul(feats, params["reg.w1"]), params["reg.b1"]))
    out = ad.add_rowvec(ad.matmul(h, params["reg.w2"]), params["reg.b2"])

    k = occ.size
    centers = v.cell_centers(occ)
    cell = v.cell_size
    half_cell = np.tile(cell / 2.0, (k, 1))
    mu = ad.add(ad.constant(centers),
                ad.mul(ad.tanh(ad.slice_axis(out, 0, 3, axis=1)), ad.constant(half_cell)))
    color = ad.sigmoid(ad.slice_axis(out, 3, 6, axis=1))
    rot = ad.normalize_rows(ad.add_rowvec(ad.slice_axis(out, 6, 10, axis=1),
                                          ad.constant(IDENTITY_QUAT_ROW)))
    cell_tile = np.tile(cell, (k, 1))
    scale = ad.add(ad.mul(ad.softplus(ad.slice_axis(out, 10, 13, axis=1)),
                          ad.constant(cell_tile)),
                   ad.constant(np.full((k, 3), config.scale_floor)))
    opacity = ad.reshape(ad.sigmoid(ad.slice_axis(out, 13, 14, axis=1)), (k,))
    logits = ad.slice_axis(out, 14, 17, axis=1)
    return GaussianSet(mu=mu, color=color, rot=rot, scale=scale,
                       opacity=opacity, logits=logits,
                       timestamp=timestamp, validate=False)
