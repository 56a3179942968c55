"""Pinhole camera model with world-to-camera extrinsics.

Pixel (row i, col j) is sampled at continuous image coordinates
(x, y) = (j + 0.5, i + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROT_ORTHO_TOL = 1e-6
DEFAULT_NEAR_PLANE = 1e-3


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world-to-camera, (3, 3)
    translation: np.ndarray  # world-to-camera, (3,)
    width: int
    height: int
    near: float = DEFAULT_NEAR_PLANE

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > ROT_ORTHO_TOL:
            raise ValueError(f"extrinsic rotation not orthonormal (max deviation {err:.2e})")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points (..., 3) to world frame."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def project_point(camera: Camera, world_point: np.ndarray):
    """Project one world point; returns ((x, y) pixel coords, depth) or None if culled."""
    p = camera.to_camera(np.asarray(world_point, dtype=np.float64).reshape(3))
    if p[2] <= camera.near:
        return None
    x = camera.fx * p[0] / p[2] + camera.cx
    y = camera.fy * p[1] / p[2] + camera.cy
    return np.array([x, y]), float(p[2])


def project_points(camera: Camera, world_points: np.ndarray):
    """Vectorized projection: returns (pixels (N,2), depths (N,), valid (N,) mask)."""
    pts = camera.to_camera(np.asarray(world_points, dtype=np.float64).reshape(-1, 3))
    z = pts[:, 2]
    valid = z > camera.near
    zsafe = np.where(valid, z, 1.0)
    px = camera.fx * pts[:, 0] / zsafe + camera.cx
    py = camera.fy * pts[:, 1] / zsafe + camera.cy
    return np.stack([px, py], axis=1), z, valid


def unproject_depth(camera: Camera, depth: np.ndarray, min_depth: float | None = None):
    """Back-project a depth image to world points.

    Returns (points (M, 3) world coordinates, (rows, cols) of the valid pixels).
    Pixels with depth <= min_depth (default: the camera near plane) are dropped.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise ValueError(f"depth image shape {depth.shape} does not match camera "
                         f"({camera.height}, {camera.width})")
    lim = camera.near if min_depth is None else min_depth
    rows, cols = np.nonzero(depth > lim)
    z = depth[rows, cols]
    x = (cols + 0.5 - camera.cx) / camera.fx * z
    y = (rows + 0.5 - camera.cy) / camera.fy * z
    cam_pts = np.stack([x, y, z], axis=1)
    return camera.to_world(cam_pts), (rows, cols)


def look_at_camera(eye, target, up, fx, fy, width, height, near=DEFAULT_NEAR_PLANE) -> Camera:
    """Camera at `eye` looking toward `target` (camera +z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:
        raise ValueError("up vector parallel to view direction")
    right /= nrm
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: camera axes in world frame
    trans = -rot @ eye
    return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                  rotation=rot, translation=trans, width=width, height=height, near=near)


def ring_cameras(n: int, radius: float, height: float, target, fx, fy, width, img_height,
                 start_angle: float = 0.0):
    """Evenly spaced cameras on a horizontal ring, all looking at `target`."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for k in range(n):
        ang = start_angle + 2.0 * np.pi * k / n
        eye = target + np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams.append(look_at_camera(eye, target, np.array([0.0, 0.0, 1.0]),
                                   fx, fy, width, img_height))
    return cams
