"""Differentiable splatting of Gaussian sets onto camera planes.

`render` is the tile-binned fast path (numba kernels by default, pure numpy
when the GSWORLD_DISABLE_NUMBA environment flag is set or numba is missing).
`render_brute_force` is the test oracle: every surviving splat is evaluated
at every pixel with no tiles and no early termination. Both share the exact
projection and alpha definition, so they agree to floating-point accuracy up
to the fast path's transmittance cutoff.

Pixels composite onto a black background; the residual transparency per
pixel is reported in `transmittance`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..core.cameras import Camera
from ..core.gaussians import GaussianSet
from . import kernels_numpy
from .projection import DEFAULT_RASTER_CONFIG, RasterConfig, project_geometry, projection_backward

try:
    from . import kernels_numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    kernels_numba = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("GSWORLD_DISABLE_NUMBA", "") not in ("1", "true", "yes")


@dataclass
class RenderOutput:
    rgb: np.ndarray            # (H, W, 3) in [0, 1]
    logit_map: np.ndarray      # (H, W, 3) accumulated instance logits
    depth_map: np.ndarray      # (H, W) alpha-blended depth
    transmittance: np.ndarray  # (H, W) residual transparency


@dataclass
class GaussianGrads:
    mu: np.ndarray
    color: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    logits: np.ndarray


def _check_finite(arrays):
    names = ("mu", "color", "rot", "scale", "opacity", "logits")
    for name, arr in zip(names, arrays):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite Gaussian parameters in field '{name}'")


def _prepare(gset_arrays, cam: Camera, config: RasterConfig):
    """Project, cull, depth-sort (ties by source index) and bound each splat."""
    mu, color, rot, scale, opacity, logits = gset_arrays
    geo = project_geometry(mu, rot, scale, opacity, cam, config)
    vidx = np.nonzero(geo["valid"])[0]
    order = np.lexsort((vidx, geo["depth"][vidx]))
    sel = vidx[order]
    px = geo["px"][sel]
    py = geo["py"][sel]
    radius = geo["radius"][sel]
    x0 = np.clip(np.ceil(px - radius - 0.5).astype(np.int64), 0, cam.width - 1)
    x1 = np.clip(np.floor(px + radius - 0.5).astype(np.int64), 0, cam.width - 1)
    y0 = np.clip(np.ceil(py - radius - 0.5).astype(np.int64), 0, cam.height - 1)
    y1 = np.clip(np.floor(py + radius - 0.5).astype(np.int64), 0, cam.height - 1)
    # degenerate boxes (fully off image) keep x0 > x1 so kernels skip them
    off = (px + radius < 0.5) | (px - radius > cam.width - 0.5) \
        | (py + radius < 0.5) | (py - radius > cam.height - 0.5)
    x1 = np.where(off, -1, x1)
    x0 = np.where(off, 0, x0)
    arrs = {
        "mean2d": np.stack([px, py], axis=1),
        "conic": geo["conic"][sel],
        "opacity": opacity[sel],
        "color": color[sel],
        "logits": logits[sel],
        "depth": geo["depth"][sel],
        "bbox": np.stack([x0, x1, y0, y1], axis=1),
    }
    return geo, sel, arrs


def _bin_tiles(arrs, cam: Camera, tile: int):
    """Per-tile candidate lists (depth order preserved within each tile)."""
    ntx = (cam.width + tile - 1) // tile
    nty = (cam.height + tile - 1) // tile
    n_tiles = ntx * nty
    bbox = arrs["bbox"]
    live = bbox[:, 0] <= bbox[:, 1]
    tx0 = bbox[:, 0] // tile
    tx1 = bbox[:, 1] // tile
    ty0 = bbox[:, 2] // tile
    ty1 = bbox[:, 3] // tile
    nx = np.where(live, tx1 - tx0 + 1, 0)
    ny = np.where(live, ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return ntx, np.zeros(0, dtype=np.int64), np.zeros(n_tiles + 1, dtype=np.int64)
    splat = np.repeat(np.arange(bbox.shape[0]), counts)
    starts = np.cumsum(counts) - counts
    offs = np.arange(total) - np.repeat(starts, counts)
    nxr = np.repeat(np.maximum(nx, 1), counts)
    kx = offs % nxr
    ky = offs // nxr
    tile_id = (np.repeat(ty0, counts) + ky) * ntx + np.repeat(tx0, counts) + kx
    order = np.argsort(tile_id, kind="stable")
    cand = splat[order].astype(np.int64)
    tile_start = np.searchsorted(tile_id[order], np.arange(n_tiles + 1)).astype(np.int64)
    return ntx, cand, tile_start


def render(gset: GaussianSet, cam: Camera,
           config: RasterConfig = DEFAULT_RASTER_CONFIG) -> RenderOutput:
    """Tile-binned forward rasterization with per-pixel early termination."""
    arrays = gset.arrays()
    _check_finite(arrays)
    h, w = cam.height, cam.width
    rgb = np.zeros((h, w, 3))
    logit_map = np.zeros((h, w, 3))
    depth_map = np.zeros((h, w))
    trans = np.ones((h, w))
    if len(gset) == 0:
        return RenderOutput(rgb, logit_map, depth_map, trans)
    _, _, arrs = _prepare(arrays, cam, config)
    if arrs["mean2d"].shape[0] == 0:
        return RenderOutput(rgb, logit_map, depth_map, trans)
    if USE_NUMBA:
        ntx, cand, tile_start = _bin_tiles(arrs, cam, config.tile_size)
        kernels_numba.forward(h, w, config.tile_size, ntx, cand, tile_start,
                              arrs["mean2d"], arrs["conic"], arrs["opacity"],
                              arrs["color"], arrs["logits"], arrs["depth"],
                              config.alpha_min, config.alpha_clamp, config.early_stop,
                              rgb, logit_map, depth_map, trans)
    else:
        rgb, logit_map, depth_map, trans = kernels_numpy.forward(
            arrs["mean2d"], arrs["conic"], arrs["opacity"], arrs["color"],
            arrs["logits"], arrs["depth"], arrs["bbox"], h, w,
            config.alpha_min, config.alpha_clamp, config.early_stop)
    return RenderOutput(rgb, logit_map, depth_map, trans)


def render_brute_force(gset: GaussianSet, cam: Camera,
                       config: RasterConfig = DEFAULT_RASTER_CONFIG) -> RenderOutput:
    """Oracle path: every splat against every pixel, termination threshold 0."""
    arrays = gset.arrays()
    _check_finite(arrays)
    h, w = cam.height, cam.width
    if len(gset) == 0:
        return RenderOutput(np.zeros((h, w, 3)), np.zeros((h, w, 3)),
                            np.zeros((h, w)), np.ones((h, w)))
    _, _, arrs = _prepare(arrays, cam, config)
    m = arrs["mean2d"].shape[0]
    full = np.tile(np.array([0, w - 1, 0, h - 1], dtype=np.int64), (m, 1))
    rgb, logit_map, depth_map, trans = kernels_numpy.forward(
        arrs["mean2d"], arrs["conic"], arrs["opacity"], arrs["color"],
        arrs["logits"], arrs["depth"], full, h, w,
        config.alpha_min, config.alpha_clamp, 0.0)
    return RenderOutput(rgb, logit_map, depth_map, trans)


def render_backward(gset: GaussianSet, cam: Camera, g_rgb: np.ndarray,
                    g_logit: np.ndarray,
                    config: RasterConfig = DEFAULT_RASTER_CONFIG) -> GaussianGrads:
    """Adjoint of `render` for upstream rgb / logit-map gradients.

    Culled particles receive zero gradient. The forward blending state is
    recomputed internally.
    """
    arrays = gset.arrays()
    _check_finite(arrays)
    n = len(gset)
    h, w = cam.height, cam.width
    g_rgb = np.asarray(g_rgb, dtype=np.float64)
    g_logit = np.asarray(g_logit, dtype=np.float64)
    if g_rgb.shape != (h, w, 3) or g_logit.shape != (h, w, 3):
        raise ValueError(f"upstream gradient shapes {g_rgb.shape}/{g_logit.shape} do not "
                         f"match image ({h}, {w}, 3)")
    out = GaussianGrads(mu=np.zeros((n, 3)), color=np.zeros((n, 3)), rot=np.zeros((n, 4)),
                        scale=np.zeros((n, 3)), opacity=np.zeros(n), logits=np.zeros((n, 3)))
    if n == 0:
        return out
    geo, sel, arrs = _prepare(arrays, cam, config)
    m = arrs["mean2d"].shape[0]
    if m == 0:
        return out
    args = (arrs["mean2d"], arrs["conic"], arrs["opacity"], arrs["color"],
            arrs["logits"], arrs["depth"])
    g_color = np.zeros((m, 3))
    g_logits = np.zeros((m, 3))
    g_opacity = np.zeros(m)
    g_px = np.zeros(m)
    g_py = np.zeros(m)
    g_conic = np.zeros((m, 3))
    if USE_NUMBA:
        ntx, cand, tile_start = _bin_tiles(arrs, cam, config.tile_size)
        rgb = np.zeros((h, w, 3))
        logit_map = np.zeros((h, w, 3))
        depth_map = np.zeros((h, w))
        trans = np.ones((h, w))
        kernels_numba.forward(h, w, config.tile_size, ntx, cand, tile_start, *args,
                              config.alpha_min, config.alpha_clamp, config.early_stop,
                              rgb, logit_map, depth_map, trans)
        kernels_numba.backward(h, w, config.tile_size, ntx, cand, tile_start, *args,
                               config.alpha_min, config.alpha_clamp, config.early_stop,
                               g_rgb, g_logit, rgb, logit_map,
                               g_color, g_logits, g_opacity, g_px, g_py, g_conic)
    else:
        rgb, logit_map, _, _ = kernels_numpy.forward(
            *args, arrs["bbox"], h, w,
            config.alpha_min, config.alpha_clamp, config.early_stop)
        g_color, g_logits, g_opacity, g_px, g_py, g_conic = kernels_numpy.backward(
            *args, arrs["bbox"], h, w,
            config.alpha_min, config.alpha_clamp, config.early_stop,
            g_rgb, g_logit, rgb, logit_map)

    # scatter per-splat pixel gradients back to full particle index space
    full_gpx = np.zeros(n)
    full_gpy = np.zeros(n)
    full_gconic = np.zeros((n, 3))
    full_gop = np.zeros(n)
    full_gpx[sel] = g_px
    full_gpy[sel] = g_py
    full_gconic[sel] = g_conic
    full_gop[sel] = g_opacity
    g_mu, g_rot, g_scale, g_op = projection_backward(
        geo, full_gpx, full_gpy, full_gconic, full_gop, config)
    out.mu = g_mu
    out.rot = g_rot
    out.scale = g_scale
    out.opacity = g_op
    out.color[sel] = g_color
    out.logits[sel] = g_logits
    return out
