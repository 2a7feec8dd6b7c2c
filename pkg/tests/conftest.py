import numpy as np
import pytest

from voxstyle.camera import Camera, look_at_camera
from voxstyle.grid import VoxelGrid


def random_grid(rng, res=(8, 8, 8), bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))) -> VoxelGrid:
    nx, ny, nz = res
    return VoxelGrid(
        bbox_min=np.array(bbox[0]),
        bbox_max=np.array(bbox[1]),
        density=rng.uniform(0.0, 4.0, size=(nx, ny, nz)),
        color=rng.uniform(0.0, 1.0, size=(nx, ny, nz, 3)),
    )


def random_ray(rng, radius=2.5):
    # Origin on a sphere outside the unit box, aimed at a jittered interior point.
    o = rng.normal(size=3)
    o = o / np.linalg.norm(o) * radius
    target = rng.uniform(-0.6, 0.6, size=3)
    d = target - o
    d /= np.linalg.norm(d)
    return o, d


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def identity_camera(width=8, height=8, fx=4.0, fy=4.0):
    return Camera(
        width=width,
        height=height,
        fx=fx,
        fy=fy,
        cx=width / 2.0,
        cy=height / 2.0,
        pose_r=np.eye(3),
        pose_t=np.zeros(3),
    )


def ring_cameras(n, radius=3.0, z=1.4, width=32, height=32, fov_x=0.9, prefix="cam"):
    cams = []
    for k in range(n):
        ang = 2.0 * np.pi * k / n
        pos = np.array([radius * np.cos(ang), radius * np.sin(ang), z])
        cams.append(
            look_at_camera(pos, (0.0, 0.0, 0.0), width, height, fov_x, view_id=f"{prefix}{k:02d}")
        )
    return cams
