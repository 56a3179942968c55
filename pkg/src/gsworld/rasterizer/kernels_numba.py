"""Numba-compiled compositing kernels (default hot path).

Candidates are grouped per tile (depth-ordered within each tile); the kernels
walk tiles serially so gradient accumulation stays deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def forward(h, w, tile, n_tiles_x, cand, tile_start,
            mean2d, conic, opacity, color, logits, depth,
            alpha_min, alpha_clamp, early_stop,
            rgb, logit_map, depth_map, trans):
    n_tiles = tile_start.shape[0] - 1
    for t in range(n_tiles):
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        if s1 == s0:
            continue
        ty = t // n_tiles_x
        tx = t % n_tiles_x
        y_end = min((ty + 1) * tile, h)
        x_end = min((tx + 1) * tile, w)
        for py in range(ty * tile, y_end):
            yc = py + 0.5
            for px in range(tx * tile, x_end):
                xc = px + 0.5
                tcur = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                l0 = 0.0
                l1 = 0.0
                l2 = 0.0
                d = 0.0
                for k in range(s0, s1):
                    if tcur < early_stop:
                        break
                    s = cand[k]
                    dx = xc - mean2d[s, 0]
                    dy = yc - mean2d[s, 1]
                    q = conic[s, 0] * (dx * dx) + 2.0 * conic[s, 1] * (dx * dy) \
                        + conic[s, 2] * (dy * dy)
                    araw = opacity[s] * np.exp(-0.5 * q)
                    if araw < alpha_min:
                        continue
                    a = araw if araw < alpha_clamp else alpha_clamp
                    wgt = a * tcur
                    r += wgt * color[s, 0]
                    g += wgt * color[s, 1]
                    b += wgt * color[s, 2]
                    l0 += wgt * logits[s, 0]
                    l1 += wgt * logits[s, 1]
                    l2 += wgt * logits[s, 2]
                    d += wgt * depth[s]
                    tcur *= 1.0 - a
                rgb[py, px, 0] = r
                rgb[py, px, 1] = g
                rgb[py, px, 2] = b
                logit_map[py, px, 0] = l0
                logit_map[py, px, 1] = l1
                logit_map[py, px, 2] = l2
                depth_map[py, px] = d
                trans[py, px] = tcur


@njit(cache=True)
def backward(h, w, tile, n_tiles_x, cand, tile_start,
             mean2d, conic, opacity, color, logits, depth,
             alpha_min, alpha_clamp, early_stop,
             g_rgb, g_logit, rgb_total, logit_total,
             g_color, g_logits, g_opacity, g_px, g_py, g_conic):
    n_tiles = tile_start.shape[0] - 1
    for t in range(n_tiles):
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        if s1 == s0:
            continue
        ty = t // n_tiles_x
        tx = t % n_tiles_x
        y_end = min((ty + 1) * tile, h)
        x_end = min((tx + 1) * tile, w)
        for py in range(ty * tile, y_end):
            yc = py + 0.5
            for px in range(tx * tile, x_end):
                xc = px + 0.5
                gc0 = g_rgb[py, px, 0]
                gc1 = g_rgb[py, px, 1]
                gc2 = g_rgb[py, px, 2]
                gl0 = g_logit[py, px, 0]
                gl1 = g_logit[py, px, 1]
                gl2 = g_logit[py, px, 2]
                if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 \
                        and gl0 == 0.0 and gl1 == 0.0 and gl2 == 0.0:
                    continue
                tcur = 1.0
                ca0 = 0.0
                ca1 = 0.0
                ca2 = 0.0
                la0 = 0.0
                la1 = 0.0
                la2 = 0.0
                for k in range(s0, s1):
                    if tcur < early_stop:
                        break
                    s = cand[k]
                    dx = xc - mean2d[s, 0]
                    dy = yc - mean2d[s, 1]
                    q = conic[s, 0] * (dx * dx) + 2.0 * conic[s, 1] * (dx * dy) \
                        + conic[s, 2] * (dy * dy)
                    araw = opacity[s] * np.exp(-0.5 * q)
                    if araw < alpha_min:
                        continue
                    a = araw if araw < alpha_clamp else alpha_clamp
                    wgt = a * tcur
                    g_color[s, 0] += wgt * gc0
                    g_color[s, 1] += wgt * gc1
                    g_color[s, 2] += wgt * gc2
                    g_logits[s, 0] += wgt * gl0
                    g_logits[s, 1] += wgt * gl1
                    g_logits[s, 2] += wgt * gl2
                    ca0 += wgt * color[s, 0]
                    ca1 += wgt * color[s, 1]
                    ca2 += wgt * color[s, 2]
                    la0 += wgt * logits[s, 0]
                    la1 += wgt * logits[s, 1]
                    la2 += wgt * logits[s, 2]
                    one_minus = 1.0 - a
                    ga = gc0 * (color[s, 0] * tcur - (rgb_total[py, px, 0] - ca0) / one_minus)
                    ga += gc1 * (color[s, 1] * tcur - (rgb_total[py, px, 1] - ca1) / one_minus)
                    ga += gc2 * (color[s, 2] * tcur - (rgb_total[py, px, 2] - ca2) / one_minus)
                    ga += gl0 * (logits[s, 0] * tcur - (logit_total[py, px, 0] - la0) / one_minus)
                    ga += gl1 * (logits[s, 1] * tcur - (logit_total[py, px, 1] - la1) / one_minus)
                    ga += gl2 * (logits[s, 2] * tcur - (logit_total[py, px, 2] - la2) / one_minus)
                    if araw < alpha_clamp:
                        g_opacity[s] += ga * araw / opacity[s]
                        gq = -0.5 * araw * ga
                        g_conic[s, 0] += gq * (dx * dx)
                        g_conic[s, 1] += gq * 2.0 * (dx * dy)
                        g_conic[s, 2] += gq * (dy * dy)
                        g_px[s] += -gq * (2.0 * conic[s, 0] * dx + 2.0 * conic[s, 1] * dy)
                        g_py[s] += -gq * (2.0 * conic[s, 1] * dx + 2.0 * conic[s, 2] * dy)
                    tcur *= one_minus
