"""Projection of 3-D Gaussians to screen-space splats.

The 3-D covariance R diag(s)^2 R^T is pushed through the camera rotation and
the pinhole Jacobian J (EWA-style first-order expansion), then stabilized by
lifting the minimum eigenvalue of the 2x2 result to a configurable floor via
a diagonal shift. The full chain has a hand-derived, vectorized adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.cameras import Camera
from ..core.gaussians import GaussianSet


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    alpha_clamp: float = 0.99       # maximum per-splat alpha
    eigen_floor: float = 0.3        # px^2, minimum cov2d eigenvalue
    alpha_min: float = 1e-12        # contributions below this are dropped
    early_stop: float = 1e-6        # fast-path transmittance termination
    cull_sigma: float = 3.0         # image-miss culling footprint


DEFAULT_RASTER_CONFIG = RasterConfig()


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray   # (2,) pixel coordinates
    cov2d: np.ndarray    # (2, 2) stabilized screen-space covariance
    depth: float
    source_index: int


def _quat_rot_normalized(rot: np.ndarray):
    """Rows of `rot` normalized, plus the per-row rotation matrices."""
    norms = np.linalg.norm(rot, axis=1, keepdims=True)
    qh = rot / norms
    w, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    r = np.empty((rot.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return qh, norms[:, 0], r


def project_geometry(mu, rot, scale, opacity, cam: Camera, config: RasterConfig):
    """Vectorized projection of all particles; returns an intermediate dict.

    The dict carries everything the backward chain needs. `valid` flags the
    particles that survive culling (in front of the near plane and with a
    cull_sigma-sized footprint overlapping the image).
    """
    n = mu.shape[0]
    wmat = cam.rotation
    t = mu @ wmat.T + cam.translation
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    in_front = tz > cam.near
    tz_safe = np.where(in_front, tz, 1.0)

    j0 = cam.fx / tz_safe
    j2 = -cam.fx * tx / tz_safe**2
    j4 = cam.fy / tz_safe
    j5 = -cam.fy * ty / tz_safe**2
    px = cam.fx * tx / tz_safe + cam.cx
    py = cam.fy * ty / tz_safe + cam.cy

    qh, qnorm, rmat = _quat_rot_normalized(rot)
    m3 = rmat * scale[:, None, :]          # R diag(s)
    sigma3 = m3 @ np.swapaxes(m3, 1, 2)
    v = wmat[None] @ sigma3 @ wmat.T[None]

    v00, v01, v02 = v[:, 0, 0], v[:, 0, 1], v[:, 0, 2]
    v11, v12, v22 = v[:, 1, 1], v[:, 1, 2], v[:, 2, 2]
    a2 = j0 * j0 * v00 + 2.0 * j0 * j2 * v02 + j2 * j2 * v22
    b2 = j0 * j4 * v01 + j0 * j5 * v02 + j2 * j4 * v12 + j2 * j5 * v22
    c2 = j4 * j4 * v11 + 2.0 * j4 * j5 * v12 + j5 * j5 * v22

    half_diff = 0.5 * (a2 - c2)
    sq = np.sqrt(half_diff**2 + b2**2)
    lam_min = 0.5 * (a2 + c2) - sq
    shift = np.maximum(0.0, config.eigen_floor - lam_min)
    af = a2 + shift
    cf = c2 + shift
    det = af * cf - b2 * b2
    det_safe = np.where(det > 0, det, 1.0)
    conic = np.stack([cf / det_safe, -b2 / det_safe, af / det_safe], axis=1)

    lam_max = 0.5 * (af + cf) + sq
    # support radius: alpha >= alpha_min requires mahalanobis q <= 2 ln(op/alpha_min)
    op_safe = np.maximum(opacity, config.alpha_min)
    q_max = 2.0 * np.log(op_safe / config.alpha_min)
    radius = np.sqrt(np.maximum(q_max, 0.0) * lam_max)
    cull_r = config.cull_sigma * np.sqrt(lam_max)
    on_image = (
        (px + cull_r >= 0.0) & (px - cull_r <= cam.width)
        & (py + cull_r >= 0.0) & (py - cull_r <= cam.height)
    )
    valid = in_front & on_image & (det > 0) & (opacity > config.alpha_min)

    return {
        "valid": valid, "t": t, "j0": j0, "j2": j2, "j4": j4, "j5": j5,
        "px": px, "py": py, "qh": qh, "qnorm": qnorm, "rmat": rmat, "m3": m3,
        "sigma3": sigma3, "v": v, "a2": a2, "b2": b2, "c2": c2,
        "half_diff": half_diff, "sq": sq, "shift": shift, "af": af, "cf": cf,
        "det": det_safe, "conic": conic, "radius": radius, "depth": tz,
        "wmat": wmat, "cam": cam, "scale": scale, "n": n,
    }


def project_gaussian(g, cam: Camera, config: RasterConfig = DEFAULT_RASTER_CONFIG):
    """Project a single particle; returns a Splat2D or None when culled."""
    geo = project_geometry(g.mu[None], g.rot[None], g.scale[None],
                           np.array([g.opacity]), cam, config)
    if not geo["valid"][0]:
        return None
    cov = np.array([[geo["af"][0], geo["b2"][0]], [geo["b2"][0], geo["cf"][0]]])
    return Splat2D(mean2d=np.array([geo["px"][0], geo["py"][0]]), cov2d=cov,
                   depth=float(geo["depth"][0]), source_index=0)


def project_gaussians(gset: GaussianSet, cam: Camera,
                      config: RasterConfig = DEFAULT_RASTER_CONFIG):
    mu, color, rot, scale, opacity, logits = gset.arrays()
    return project_geometry(mu, rot, scale, opacity, cam, config)


def projection_backward(geo: dict, g_px, g_py, g_conic, g_opacity, config: RasterConfig):
    """Chain per-splat screen-space gradients back to (mu, rot, scale, opacity).

    `g_conic` is (N, 3): gradients w.r.t. the conic values (A, B, C) as used
    in the kernel quadratic q = A dx^2 + 2 B dx dy + C dy^2. Culled particles
    must carry zero incoming gradients.
    """
    cam: Camera = geo["cam"]
    wmat = geo["wmat"]
    n = geo["n"]
    j0, j2, j4, j5 = geo["j0"], geo["j2"], geo["j4"], geo["j5"]
    tx, ty, tz = geo["t"][:, 0], geo["t"][:, 1], np.where(geo["valid"], geo["t"][:, 2], 1.0)

    g_a = g_conic[:, 0]
    g_b = g_conic[:, 1]
    g_c = g_conic[:, 2]

    # A = cf/det, B = -b2/det, C = af/det with det = af*cf - b2^2
    af, b2f, cf, det = geo["af"], geo["b2"], geo["cf"], geo["det"]
    inv_det2 = 1.0 / (det * det)
    g_af = (-g_a * cf * cf - g_c * b2f * b2f + g_b * b2f * cf) * inv_det2
    g_cf = (-g_a * b2f * b2f - g_c * af * af + g_b * b2f * af) * inv_det2
    g_b2 = (g_a * 2.0 * b2f * cf + g_c * 2.0 * af * b2f) * inv_det2 \
        + g_b * (-1.0 / det - 2.0 * b2f * b2f * inv_det2)

    # eigenvalue-floor shift: (af, cf) = (a2, c2) + shift(a2, b2, c2)
    g_shift = g_af + g_cf
    active = geo["shift"] > 0.0
    sq_safe = np.where(geo["sq"] > 0.0, geo["sq"], 1.0)
    dl_da = np.where(geo["sq"] > 0.0, 0.5 - geo["half_diff"] / (2.0 * sq_safe), 0.5)
    dl_dc = np.where(geo["sq"] > 0.0, 0.5 + geo["half_diff"] / (2.0 * sq_safe), 0.5)
    dl_db = np.where(geo["sq"] > 0.0, -geo["b2"] / sq_safe, 0.0)
    ga2 = g_af - np.where(active, g_shift * dl_da, 0.0)
    gc2 = g_cf - np.where(active, g_shift * dl_dc, 0.0)
    gb2 = g_b2 - np.where(active, g_shift * dl_db, 0.0)

    v = geo["v"]
    v00, v01, v02 = v[:, 0, 0], v[:, 0, 1], v[:, 0, 2]
    v11, v12, v22 = v[:, 1, 1], v[:, 1, 2], v[:, 2, 2]

    # a2 = j0^2 v00 + 2 j0 j2 v02 + j2^2 v22
    # b2 = j0 j4 v01 + j0 j5 v02 + j2 j4 v12 + j2 j5 v22
    # c2 = j4^2 v11 + 2 j4 j5 v12 + j5^2 v22
    g_j0 = ga2 * 2.0 * (j0 * v00 + j2 * v02) + gb2 * (j4 * v01 + j5 * v02)
    g_j2 = ga2 * 2.0 * (j0 * v02 + j2 * v22) + gb2 * (j4 * v12 + j5 * v22)
    g_j4 = gc2 * 2.0 * (j4 * v11 + j5 * v12) + gb2 * (j0 * v01 + j2 * v12)
    g_j5 = gc2 * 2.0 * (j4 * v12 + j5 * v22) + gb2 * (j0 * v02 + j2 * v22)

    # symmetric-value gradients on V, split across mirrored entries
    gv = np.zeros((n, 3, 3))
    gv[:, 0, 0] = ga2 * j0 * j0
    gv[:, 1, 1] = gc2 * j4 * j4
    gv[:, 2, 2] = ga2 * j2 * j2 + gb2 * j2 * j5 + gc2 * j5 * j5
    gv[:, 0, 1] = gv[:, 1, 0] = 0.5 * gb2 * j0 * j4
    gv[:, 0, 2] = gv[:, 2, 0] = ga2 * j0 * j2 + 0.5 * gb2 * j0 * j5
    gv[:, 1, 2] = gv[:, 2, 1] = gc2 * j4 * j5 + 0.5 * gb2 * j2 * j4

    g_sigma3 = wmat.T[None] @ gv @ wmat[None]
    g_m3 = 2.0 * g_sigma3 @ geo["m3"]
    g_scale = np.einsum("nak,nak->nk", g_m3, geo["rmat"])
    g_r = g_m3 * geo["scale"][:, None, :]

    qh = geo["qh"]
    w, x, y, z = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    r = g_r  # (n, 3, 3) gradient w.r.t. rotation-matrix entries

    g_qw = 2.0 * (-z * r[:, 0, 1] + y * r[:, 0, 2] + z * r[:, 1, 0] - x * r[:, 1, 2]
                  - y * r[:, 2, 0] + x * r[:, 2, 1])
    g_qx = 2.0 * (y * r[:, 0, 1] + z * r[:, 0, 2] + y * r[:, 1, 0] - 2 * x * r[:, 1, 1]
                  - w * r[:, 1, 2] + z * r[:, 2, 0] + w * r[:, 2, 1] - 2 * x * r[:, 2, 2])
    g_qy = 2.0 * (-2 * y * r[:, 0, 0] + x * r[:, 0, 1] + w * r[:, 0, 2] + x * r[:, 1, 0]
                  + z * r[:, 1, 2] - w * r[:, 2, 0] + z * r[:, 2, 1] - 2 * y * r[:, 2, 2])
    g_qz = 2.0 * (-2 * z * r[:, 0, 0] - w * r[:, 0, 1] + x * r[:, 0, 2] + w * r[:, 1, 0]
                  - 2 * z * r[:, 1, 1] + y * r[:, 1, 2] + x * r[:, 2, 0] + y * r[:, 2, 1])
    g_qh = np.stack([g_qw, g_qx, g_qy, g_qz], axis=1)
    qdot = np.sum(g_qh * qh, axis=1, keepdims=True)
    g_rot = (g_qh - qh * qdot) / geo["qnorm"][:, None]

    # mean2d and J entries back to the camera-frame point
    fx, fy = cam.fx, cam.fy
    g_tx = g_px * j0 + g_j2 * (-fx / tz**2)
    g_ty = g_py * j4 + g_j5 * (-fy / tz**2)
    g_tz = (g_px * j2 + g_py * j5 + g_j0 * (-fx / tz**2) + g_j4 * (-fy / tz**2)
            + g_j2 * (2.0 * fx * tx / tz**3) + g_j5 * (2.0 * fy * ty / tz**3))
    g_t = np.stack([g_tx, g_ty, g_tz], axis=1)
    g_mu = g_t @ wmat

    invalid = ~geo["valid"]
    for arr in (g_mu, g_rot, g_scale):
        arr[invalid] = 0.0
    g_opacity = np.where(invalid, 0.0, g_opacity)
    return g_mu, g_rot, g_scale, g_opacity
