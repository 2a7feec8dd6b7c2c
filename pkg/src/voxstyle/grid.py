"""Voxel radiance field: a regular 3D lattice of density and RGB color.

Colors are view-independent scalars per voxel; densities are non-negative.
Grids serialize to the RNVG binary format (f32, little-endian, x-fastest).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

RNVG_MAGIC = b"RNVG"
RNVG_VERSION = 1


@dataclass(eq=False)
class VoxelGrid:
    """Density + color sampled on a regular lattice inside an axis-aligned box.

    density: (Nx, Ny, Nz) float64, >= 0, in units of opacity per world unit.
    color:   (Nx, Ny, Nz, 3) float64 in [0, 1].
    Voxel (i, j, k) is centered at bbox_min + (i+.5, j+.5, k+.5) * voxel_size.
    """

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        self.density = np.asarray(self.density, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if self.density.ndim != 3:
            raise InputError("density must be a 3D array")
        if self.color.shape != self.density.shape + (3,):
            raise InputError(
                f"color shape {self.color.shape} does not match density shape {self.density.shape}"
            )
        if not np.all(self.bbox_min < self.bbox_max):
            raise InputError("bbox_min must be strictly below bbox_max componentwise")
        if np.any(self.density < 0):
            raise InputError("densities must be non-negative")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise InputError("color channels must lie in [0, 1]")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.density.shape

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / np.asarray(self.resolution, dtype=np.float64)

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(
            bbox_min=self.bbox_min.copy(),
            bbox_max=self.bbox_max.copy(),
            density=self.density.copy(),
            color=self.color.copy(),
        )

    @classmethod
    def empty(cls, resolution, bbox_min, bbox_max, color=0.0) -> "VoxelGrid":
        nx, ny, nz = resolution
        return cls(
            bbox_min=np.asarray(bbox_min, dtype=np.float64),
            bbox_max=np.asarray(bbox_max, dtype=np.float64),
            density=np.zeros((nx, ny, nz)),
            color=np.full((nx, ny, nz, 3), float(color)),
        )


def interp_weights(grid: VoxelGrid, points: np.ndarray):
    """Trilinear corner indices and weights for a batch of world points.

    Returns (flat_idx, weights, inside) where flat_idx is (..., 8) int64 into
    the x-fastest flattened lattice, weights is (..., 8) summing to 1, and
    inside marks points within the bbox. Points in the half-voxel shell next
    to the bbox faces clamp to the nearest cell (constant extension).
    """
    pts = np.asarray(points, dtype=np.float64)
    nx, ny, nz = grid.resolution
    res = np.array([nx, ny, nz], dtype=np.float64)
    inside = np.all((pts >= grid.bbox_min) & (pts <= grid.bbox_max), axis=-1)

    # Continuous coordinate in the voxel-center lattice.
    u = (pts - grid.bbox_min) / grid.voxel_size - 0.5
    u = np.clip(u, 0.0, res - 1.0)
    hi_cell = np.maximum(res.astype(np.int64) - 2, 0)
    i0 = np.minimum(np.floor(u).astype(np.int64), hi_cell)
    frac = np.clip(u - i0, 0.0, 1.0)
    # Single-voxel axes collapse to weight 1 on that voxel.
    frac = np.where(np.asarray(grid.resolution) == 1, 0.0, frac)
    i1 = np.minimum(i0 + 1, np.asarray(grid.resolution, dtype=np.int64) - 1)

    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    wx = np.stack([1.0 - fx, fx], axis=-1)
    wy = np.stack([1.0 - fy, fy], axis=-1)
    wz = np.stack([1.0 - fz, fz], axis=-1)

    # Corner order: (x0y0z0, x1y0z0, x0y1z0, x1y1z0, x0y0z1, ...) — x fastest.
    ca = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    cb = np.array([0, 0, 1, 1, 0, 0, 1, 1])
    cc = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    base = i0[..., 0] + nx * (i0[..., 1] + ny * i0[..., 2])
    # Per-axis step to the clamped upper neighbor (0 at the top edge).
    sx = i1[..., 0] - i0[..., 0]
    sy = (i1[..., 1] - i0[..., 1]) * nx
    sz = (i1[..., 2] - i0[..., 2]) * (nx * ny)
    flat_idx = (
        base[..., None]
        + ca * sx[..., None]
        + cb * sy[..., None]
        + cc * sz[..., None]
    )
    weights = wx[..., ca] * wy[..., cb] * wz[..., cc]
    return flat_idx, weights, inside


def sample_field(grid: VoxelGrid, points: np.ndarray):
    """Trilinear (sigma, rgb) at world points; zeros outside the bbox.

    Accepts a single 3-vector or any (..., 3) batch.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    flat_idx, w, inside = interp_weights(grid, pts)
    dens_flat = grid.density.ravel(order="F")
    col_flat = grid.color.reshape(-1, 3, order="F")
    sigma = np.sum(dens_flat[flat_idx] * w, axis=-1)
    rgb = np.sum(col_flat[flat_idx] * w[..., None], axis=-2)
    sigma = np.where(inside, sigma, 0.0)
    rgb = np.where(inside[..., None], rgb, 0.0)
    if single:
        return float(sigma[0]), rgb[0]
    return sigma, rgb


def save_grid(grid: VoxelGrid, path) -> None:
    """Write the RNVG binary format.

    Layout: magic 'RNVG', u32 version, u32 Nx Ny Nz, 6 f32 bbox, then
    Nx*Ny*Nz f32 densities (x-fastest), then RGB f32 triples per voxel in
    the same voxel order. Little-endian throughout.
    """
    nx, ny, nz = grid.resolution
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(RNVG_MAGIC)
        fh.write(struct.pack("<IIII", RNVG_VERSION, nx, ny, nz))
        fh.write(np.concatenate([grid.bbox_min, grid.bbox_max]).astype("<f4").tobytes())
        fh.write(grid.density.astype("<f4").tobytes(order="F"))
        # Channel-fastest within each voxel, voxels x-fastest.
        col = np.ascontiguousarray(grid.color.transpose(2, 1, 0, 3), dtype="<f4")
        fh.write(col.tobytes())


def load_grid(path) -> VoxelGrid:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 + 16 + 24:
        raise FormatError(f"{path}: truncated RNVG header")
    if data[:4] != RNVG_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {RNVG_MAGIC!r}")
    version, nx, ny, nz = struct.unpack_from("<IIII", data, 4)
    if version != RNVG_VERSION:
        raise FormatError(f"{path}: unsupported RNVG version {version}")
    off = 20
    bbox = np.frombuffer(data, dtype="<f4", count=6, offset=off).astype(np.float64)
    off += 24
    nvox = nx * ny * nz
    expected = off + 4 * nvox + 12 * nvox
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    dens = np.frombuffer(data, dtype="<f4", count=nvox, offset=off).astype(np.float64)
    off += 4 * nvox
    cols = np.frombuffer(data, dtype="<f4", count=3 * nvox, offset=off).astype(np.float64)
    density = dens.reshape((nx, ny, nz), order="F")
    color = cols.reshape((nz, ny, nx, 3)).transpose(2, 1, 0, 3)
    return VoxelGrid(bbox_min=bbox[:3], bbox_max=bbox[3:], density=density, color=color)
