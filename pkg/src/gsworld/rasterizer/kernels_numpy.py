"""Pure-numpy compositing kernels (fallback path).

Splats arrive depth-sorted; each is composited over its support bounding box
while a running transmittance image applies per-pixel early termination. The
math is kept operation-for-operation identical to the numba kernels.
"""

from __future__ import annotations

import numpy as np


def forward(mean2d, conic, opacity, color, logits, depth, bbox, h, w,
            alpha_min, alpha_clamp, early_stop):
    """Composite sorted splats; returns (rgb, logit_map, depth_map, transmittance)."""
    rgb = np.zeros((h, w, 3))
    logit_map = np.zeros((h, w, 3))
    depth_map = np.zeros((h, w))
    trans = np.ones((h, w))
    for i in range(mean2d.shape[0]):
        x0, x1, y0, y1 = bbox[i]
        if x0 > x1 or y0 > y1:
            continue
        dx = (np.arange(x0, x1 + 1) + 0.5) - mean2d[i, 0]
        dy = (np.arange(y0, y1 + 1) + 0.5) - mean2d[i, 1]
        dxg = dx[None, :]
        dyg = dy[:, None]
        q = conic[i, 0] * (dxg * dxg) + 2.0 * conic[i, 1] * (dxg * dyg) \
            + conic[i, 2] * (dyg * dyg)
        araw = opacity[i] * np.exp(-0.5 * q)
        tpatch = trans[y0:y1 + 1, x0:x1 + 1]
        live = (araw >= alpha_min) & (tpatch >= early_stop)
        alpha = np.where(live, np.minimum(araw, alpha_clamp), 0.0)
        wgt = alpha * tpatch
        rgb[y0:y1 + 1, x0:x1 + 1] += wgt[:, :, None] * color[i]
        logit_map[y0:y1 + 1, x0:x1 + 1] += wgt[:, :, None] * logits[i]
        depth_map[y0:y1 + 1, x0:x1 + 1] += wgt * depth[i]
        trans[y0:y1 + 1, x0:x1 + 1] = tpatch * (1.0 - alpha)
    return rgb, logit_map, depth_map, trans


def backward(mean2d, conic, opacity, color, logits, depth, bbox, h, w,
             alpha_min, alpha_clamp, early_stop, g_rgb, g_logit,
             rgb_total, logit_total):
    """Per-splat gradients of the composite given upstream image gradients.

    `rgb_total` / `logit_total` are the forward outputs (the composited sums),
    used to form suffix sums without a per-pixel second pass.
    Returns (g_color, g_logits, g_opacity, g_px, g_py, g_conic) per splat,
    where g_conic is w.r.t. the (A, B, C) conic values.
    """
    m = mean2d.shape[0]
    g_color = np.zeros((m, 3))
    g_logits = np.zeros((m, 3))
    g_opacity = np.zeros(m)
    g_px = np.zeros(m)
    g_py = np.zeros(m)
    g_conic = np.zeros((m, 3))
    trans = np.ones((h, w))
    c_acc = np.zeros((h, w, 3))
    l_acc = np.zeros((h, w, 3))
    for i in range(m):
        x0, x1, y0, y1 = bbox[i]
        if x0 > x1 or y0 > y1:
            continue
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        dx = (np.arange(x0, x1 + 1) + 0.5) - mean2d[i, 0]
        dy = (np.arange(y0, y1 + 1) + 0.5) - mean2d[i, 1]
        dxg = dx[None, :]
        dyg = dy[:, None]
        q = conic[i, 0] * (dxg * dxg) + 2.0 * conic[i, 1] * (dxg * dyg) \
            + conic[i, 2] * (dyg * dyg)
        araw = opacity[i] * np.exp(-0.5 * q)
        tpatch = trans[sl]
        live = (araw >= alpha_min) & (tpatch >= early_stop)
        alpha = np.where(live, np.minimum(araw, alpha_clamp), 0.0)
        wgt = alpha * tpatch

        gc_patch = g_rgb[sl]
        gl_patch = g_logit[sl]
        g_color[i] = np.sum(wgt[:, :, None] * gc_patch, axis=(0, 1))
        g_logits[i] = np.sum(wgt[:, :, None] * gl_patch, axis=(0, 1))

        c_new = c_acc[sl] + wgt[:, :, None] * color[i]
        l_new = l_acc[sl] + wgt[:, :, None] * logits[i]
        one_minus = 1.0 - alpha
        safe = np.where(one_minus > 0.0, one_minus, 1.0)
        suffix_c = (rgb_total[sl] - c_new) / safe[:, :, None]
        suffix_l = (logit_total[sl] - l_new) / safe[:, :, None]
        g_alpha = np.sum(gc_patch * (color[i][None, None, :] * tpatch[:, :, None] - suffix_c),
                         axis=2)
        g_alpha += np.sum(gl_patch * (logits[i][None, None, :] * tpatch[:, :, None] - suffix_l),
                          axis=2)

        flows = live & (araw < alpha_clamp)
        ga = np.where(flows, g_alpha, 0.0)
        # d alpha / d opacity = exp(-q/2) = araw / opacity; d alpha / d q = -araw / 2
        g_opacity[i] = np.sum(ga * np.where(flows, araw, 0.0)) / opacity[i]
        g_q = -0.5 * np.where(flows, araw, 0.0) * ga
        g_conic[i, 0] = np.sum(g_q * (dxg * dxg))
        g_conic[i, 1] = np.sum(g_q * 2.0 * (dxg * dyg))
        g_conic[i, 2] = np.sum(g_q * (dyg * dyg))
        g_px[i] = np.sum(-g_q * (2.0 * conic[i, 0] * dxg + 2.0 * conic[i, 1] * dyg))
        g_py[i] = np.sum(-g_q * (2.0 * conic[i, 1] * dxg + 2.0 * conic[i, 2] * dyg))

        c_acc[sl] = c_new
        l_acc[sl] = l_new
        trans[sl] = tpatch * one_minus
    return g_color, g_logits, g_opacity, g_px, g_py, g_conic
