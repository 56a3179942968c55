"""Tape integration: the rasterizer as a custom differentiable operation.

Gradients flow through the rgb and logit-map outputs; depth and transmittance
are exposed for inspection but carry no gradient.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..core.gaussians import GaussianSet
from .projection import DEFAULT_RASTER_CONFIG
from .rasterize import RenderOutput, render, render_backward


def _forward(mu, color, rot, scale, opacity, logits, *, cam, config):
    gset = GaussianSet(mu, color, rot, scale, opacity, logits, validate=False)
    out = render(gset, cam, config)
    return out.rgb, out.logit_map, out.depth_map, out.transmittance


def _backward(inputs, outputs, upstream, *, cam, config):
    g_rgb, g_logit = upstream[0], upstream[1]
    if not g_rgb.any() and not g_logit.any():
        return tuple(np.zeros(arr.shape) for arr in inputs)
    gset = GaussianSet(*inputs, validate=False)
    g = render_backward(gset, cam, g_rgb, g_logit, config)
    return g.mu, g.color, g.rot, g.scale, g.opacity, g.logits


_render_op = ad.register_custom(_forward, _backward)


def render_diff(gset: GaussianSet, cam, config=DEFAULT_RASTER_CONFIG):
    """Render a GaussianSet whose fields may be tensors.

    Returns (RenderOutput of plain arrays, rgb tensor, logit tensor); the
    tensors are tape-linked when any input field requires gradients.
    """
    fields = (gset.mu, gset.color, gset.rot, gset.scale, gset.opacity, gset.logits)
    tensors = tuple(f if isinstance(f, ad.Tensor) else ad.constant(f) for f in fields)
    rgb_t, logit_t, depth, trans = _render_op(*tensors, cam=cam, config=config)
    out = RenderOutput(rgb=rgb_t.data, logit_map=logit_t.data,
                       depth_map=depth.data, transmittance=trans.data)
    return out, rgb_t, logit_t
