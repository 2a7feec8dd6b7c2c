"""Procedural ground-truth scene for desk-scale runs: a few colored solids
on a ground slab inside the unit box, plus ring cameras and rendered views.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera, look_at_camera
from .dataset import save_dataset
from .grid import VoxelGrid, save_grid
from .render import SampleSpec, render_view

TOY_FOV_X = 0.8
TOY_DENSITY = 50.0


def toy_grid(res: int = 32) -> VoxelGrid:
    """Ground slab, a dividing wall, two side spheres, one floating sphere.

    The two spheres sit on opposite sides of the wall so single-reference
    coverage differs front/back.
    """
    grid = VoxelGrid.empty((res, res, res), (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), color=0.0)
    cs = np.linspace(-1.0, 1.0, res, endpoint=False) + 1.0 / res
    x, y, z = np.meshgrid(cs, cs, cs, indexing="ij")

    def paint(mask, color):
        grid.density[mask] = TOY_DENSITY
        grid.color[mask] = color

    paint(z < -0.72, (0.42, 0.5, 0.36))  # ground
    wall = (np.abs(x) < 0.09) & (np.abs(y) < 0.55) & (z < 0.35)
    paint(wall, (0.66, 0.55, 0.3))
    sph_a = (x + 0.48) ** 2 + (y - 0.05) ** 2 + (z + 0.34) ** 2 < 0.30**2
    paint(sph_a, (0.72, 0.26, 0.24))
    sph_b = (x - 0.5) ** 2 + (y + 0.1) ** 2 + (z + 0.32) ** 2 < 0.28**2
    paint(sph_b, (0.25, 0.36, 0.7))
    sph_c = x**2 + y**2 + (z - 0.62) ** 2 < 0.22**2
    paint(sph_c, (0.56, 0.32, 0.6))
    return grid


def ring_camera(angle: float, width: int = 64, height: int = 64, radius: float = 3.1, z: float = 1.3, view_id=None) -> Camera:
    pos = np.array([radius * np.cos(angle), radius * np.sin(angle), z])
    return look_at_camera(pos, (0.0, 0.0, -0.1), width, height, TOY_FOV_X, view_id=view_id)


def toy_cameras(n_train: int = 20, n_test: int = 5, width: int = 64, height: int = 64):
    """Train ring plus an offset held-out ring."""
    train = [
        ring_camera(2 * np.pi * k / n_train, width, height, view_id=f"train_{k:03d}")
        for k in range(n_train)
    ]
    test = [
        ring_camera(2 * np.pi * (k + 0.5) / n_test, width, height, radius=3.0, z=1.5, view_id=f"test_{k:03d}")
        for k in range(n_test)
    ]
    return train, test


def hue_rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate RGB around the gray axis; output clipped to [0, 1]."""
    theta = np.deg2rad(degrees)
    u = np.ones(3) / np.sqrt(3.0)
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    rot = np.eye(3) * np.cos(theta) + np.sin(theta) * k + (1 - np.cos(theta)) * np.outer(u, u)
    out = np.asarray(image) @ rot.T
    return np.clip(out, 0.0, 1.0)


def hue_rotate_grid(grid: VoxelGrid, degrees: float) -> VoxelGrid:
    out = grid.copy()
    out.color = hue_rotate(out.color, degrees)
    return out


def generate_toy_dataset(out_dir, res: int = 32, n_train: int = 20, n_test: int = 5, width: int = 64, height: int = 64) -> dict:
    """Write grid.rnvg plus posed train/test renders; returns summary paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = toy_grid(res)
    spec = SampleSpec.for_grid(grid)
    train, test = toy_cameras(n_train, n_test, width, height)
    train_imgs = [render_view(grid, cam, spec) for cam in train]
    test_imgs = [render_view(grid, cam, spec) for cam in test]
    save_grid(grid, out / "grid.rnvg")
    save_dataset(out / "train", train, train_imgs, TOY_FOV_X)
    save_dataset(out / "test", test, test_imgs, TOY_FOV_X)
    return {
        "grid": str(out / "grid.rnvg"),
        "train_dir": str(out / "train"),
        "test_dir": str(out / "test"),
        "n_train": n_train,
        "n_test": n_test,
        "resolution": res,
    }
