"""Pinhole cameras and world-space rays.

Camera space: +x image right, +y image down, +z forward. ``pose_r`` /
``pose_t`` form the world-from-camera transform; pixel (px, py) back-projects
through its center (px+0.5, py+0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError


@dataclass(eq=False)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pose_r: np.ndarray  # (3, 3) rotation, world-from-camera
    pose_t: np.ndarray  # (3,) camera center in world units
    view_id: Optional[str] = None

    def __post_init__(self):
        self.pose_r = np.asarray(self.pose_r, dtype=np.float64).reshape(3, 3)
        self.pose_t = np.asarray(self.pose_t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")
        rtr = self.pose_r.T @ self.pose_r
        if not np.allclose(rtr, np.eye(3), atol=1e-6) or np.linalg.det(self.pose_r) < 0:
            raise InputError("pose rotation must be orthonormal with determinant +1")

    def world_from_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.pose_r
        m[:3, 3] = self.pose_t
        return m


@dataclass(eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: Optional[tuple[float, float]] = None
    view_id: Optional[str] = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-6:
            raise InputError(f"ray direction must be unit-norm, got |d| = {n}")


def generate_ray(camera: Camera, px: float, py: float) -> Ray:
    """Back-project one pixel; px/py may be fractional, bounds are [0, W)x[0, H)."""
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise InputError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image")
    d_cam = np.array(
        [
            (px + 0.5 - camera.cx) / camera.fx,
            (py + 0.5 - camera.cy) / camera.fy,
            1.0,
        ]
    )
    d = camera.pose_r @ d_cam
    d /= np.linalg.norm(d)
    return Ray(origin=camera.pose_t.copy(), direction=d, pixel=(px, py), view_id=camera.view_id)


def camera_rays(camera: Camera):
    """All pixel rays of a camera in scanline order (y outer, x inner).

    Returns (origins, directions) with shape (H*W, 3); directions unit-norm.
    """
    xs = np.arange(camera.width, dtype=np.float64) + 0.5
    ys = np.arange(camera.height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)  # (H, W)
    d_cam = np.stack(
        [
            (gx - camera.cx) / camera.fx,
            (gy - camera.cy) / camera.fy,
            np.ones_like(gx),
        ],
        axis=-1,
    ).reshape(-1, 3)
    d = d_cam @ camera.pose_r.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.pose_t, d.shape).copy()
    return o, d


def look_at_camera(
    position,
    target,
    width: int,
    height: int,
    fov_x: float,
    up=(0.0, 0.0, 1.0),
    view_id: Optional[str] = None,
) -> Camera:
    """Camera at ``position`` looking toward ``target``; fov_x in radians."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along up: pick an arbitrary right
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(forward, right)
    r = np.stack([right, down, forward], axis=1)
    fx = 0.5 * width / np.tan(0.5 * fov_x)
    return Camera(
        width=width,
        height=height,
        fx=fx,
        fy=fx,
        cx=width / 2.0,
        cy=height / 2.0,
        pose_r=r,
        pose_t=position,
        view_id=view_id,
    )
