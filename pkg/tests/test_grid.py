import numpy as np
import pytest

from voxstyle.errors import FormatError, InputError
from voxstyle.grid import VoxelGrid, load_grid, sample_field, save_grid

from conftest import random_grid


def test_validation_rejects_bad_fields():
    ok = VoxelGrid.empty((2, 2, 2), (0, 0, 0), (1, 1, 1))
    with pytest.raises(InputError):
        VoxelGrid(ok.bbox_max, ok.bbox_min, ok.density, ok.color)
    with pytest.raises(InputError):
        VoxelGrid(ok.bbox_min, ok.bbox_max, ok.density - 1.0, ok.color)
    with pytest.raises(InputError):
        VoxelGrid(ok.bbox_min, ok.bbox_max, ok.density, ok.color + 2.0)


def test_sample_at_voxel_center():
    g = VoxelGrid.empty((4, 4, 4), (0, 0, 0), (4, 4, 4))
    g.density[1, 2, 3] = 5.0
    g.color[1, 2, 3] = (0.2, 0.4, 0.6)
    center = np.array([1.5, 2.5, 3.5])
    sigma, rgb = sample_field(g, center)
    assert sigma == pytest.approx(5.0)
    assert np.allclose(rgb, [0.2, 0.4, 0.6])


def test_sample_midpoint_is_mean_of_neighbors():
    g = VoxelGrid.empty((4, 1, 1), (0, 0, 0), (4, 1, 1))
    g.density[1, 0, 0] = 2.0
    g.density[2, 0, 0] = 6.0
    g.color[1, 0, 0] = (1.0, 0.0, 0.0)
    g.color[2, 0, 0] = (0.0, 1.0, 0.0)
    sigma, rgb = sample_field(g, np.array([2.0, 0.5, 0.5]))
    assert sigma == pytest.approx(4.0)
    assert np.allclose(rgb, [0.5, 0.5, 0.0])


def test_sample_outside_bbox_is_zero():
    g = VoxelGrid.empty((2, 2, 2), (0, 0, 0), (1, 1, 1), color=0.9)
    g.density[:] = 3.0
    sigma, rgb = sample_field(g, np.array([1.5, 0.5, 0.5]))
    assert sigma == 0.0
    assert np.allclose(rgb, 0.0)


def test_rnvg_round_trip(tmp_path, rng):
    g = random_grid(rng, res=(3, 4, 5), bbox=((-1, -2, 0), (2, 1, 3)))
    # Use f32-representable values so the round trip is bit-identical.
    g = VoxelGrid(
        g.bbox_min,
        g.bbox_max,
        g.density.astype(np.float32).astype(np.float64),
        g.color.astype(np.float32).astype(np.float64),
    )
    p = tmp_path / "g.rnvg"
    save_grid(g, p)
    back = load_grid(p)
    assert back.resolution == g.resolution
    assert np.array_equal(back.bbox_min, g.bbox_min)
    assert np.array_equal(back.density, g.density)
    assert np.array_equal(back.color, g.color)


def test_rnvg_layout_is_x_fastest(tmp_path):
    g = VoxelGrid.empty((2, 2, 1), (0, 0, 0), (1, 1, 1))
    g.density[1, 0, 0] = 7.0
    p = tmp_path / "g.rnvg"
    save_grid(g, p)
    raw = np.frombuffer(p.read_bytes()[4 + 16 + 24 :], dtype="<f4")
    # densities: index x + Nx*(y + Ny*z); (1,0,0) -> flat 1
    assert raw[1] == 7.0


def test_rnvg_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.rnvg"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        load_grid(p)
    g = VoxelGrid.empty((2, 2, 2), (0, 0, 0), (1, 1, 1))
    p2 = tmp_path / "trunc.rnvg"
    save_grid(g, p2)
    p2.write_bytes(p2.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_grid(p2)
