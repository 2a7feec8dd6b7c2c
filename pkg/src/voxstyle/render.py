"""Volume rendering on voxel grids: fixed-step ray marching, alpha
compositing, accumulated-density depth, and analytic gradients.

Per-ray color is sum_i T_i (1 - exp(-sigma_i * delta)) * c_i with
T_i = exp(-sum_{j<i} sigma_j * delta); depth is the first sample whose
exclusive prefix of sigma*delta reaches the ``sigma_z`` threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import Camera, Ray, camera_rays
from .errors import InputError
from .grid import VoxelGrid, interp_weights


@dataclass
class SampleSpec:
    """Ray-marching parameters.

    step_size: world units between consecutive samples.
    max_samples: cap on samples per ray.
    sigma_z: accumulated-density threshold that defines pseudo-depth.
    """

    step_size: float
    max_samples: int = 512
    sigma_z: float = 0.8

    def __post_init__(self):
        if self.step_size <= 0:
            raise InputError("step_size must be positive")
        if self.sigma_z <= 0:
            raise InputError("sigma_z must be positive")
        if self.max_samples < 1:
            raise InputError("max_samples must be at least 1")

    @classmethod
    def for_grid(cls, grid: VoxelGrid, sigma_z: float = 0.8, max_samples: int = 512) -> "SampleSpec":
        """Default step: half the smallest voxel edge."""
        return cls(step_size=0.5 * float(np.min(grid.voxel_size)), max_samples=max_samples, sigma_z=sigma_z)


def ray_aabb_spans(bbox_min, bbox_max, origins, dirs):
    """Slab test. Returns (t0, t1) entry/exit distances, t0 >= 0; a ray
    misses when t1 <= t0."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (bbox_min - o) / d
        tb = (bbox_max - o) / d
    # Axis-parallel rays: inside the slab -> (-inf, inf), outside -> empty.
    par = d == 0.0
    inside_slab = (o >= bbox_min) & (o <= bbox_max)
    lo = np.where(par, np.where(inside_slab, -np.inf, np.inf), np.minimum(ta, tb))
    hi = np.where(par, np.where(inside_slab, np.inf, -np.inf), np.maximum(ta, tb))
    t0 = np.maximum(np.max(lo, axis=-1), 0.0)
    t1 = np.min(hi, axis=-1)
    return t0, t1


@dataclass
class MarchBatch:
    """Precomputed sample lattice for a batch of rays.

    ts:      (B, N) sample distances (midpoint rule), 0 where masked out.
    mask:    (B, N) valid-sample flags.
    step:    scalar spacing; every Eq.-style delta equals it.
    flat_idx/(B, N, 8) corner gather indices, corner_w matching weights.
    """

    ts: np.ndarray
    mask: np.ndarray
    step: float
    flat_idx: np.ndarray
    corner_w: np.ndarray


def march_rays(grid: VoxelGrid, origins, dirs, spec: SampleSpec) -> MarchBatch:
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    t0, t1 = ray_aabb_spans(grid.bbox_min, grid.bbox_max, o, d)
    span = np.maximum(t1 - t0, 0.0)
    counts = np.minimum(np.floor(span / spec.step_size).astype(np.int64), spec.max_samples)
    nmax = int(counts.max()) if counts.size else 0
    if nmax == 0:
        b = o.shape[0]
        return MarchBatch(
            ts=np.zeros((b, 0)),
            mask=np.zeros((b, 0), dtype=bool),
            step=spec.step_size,
            flat_idx=np.zeros((b, 0, 8), dtype=np.int64),
            corner_w=np.zeros((b, 0, 8)),
        )
    offs = (np.arange(nmax) + 0.5) * spec.step_size
    ts = t0[:, None] + offs[None, :]
    mask = np.arange(nmax)[None, :] < counts[:, None]
    pts = o[:, None, :] + ts[..., None] * d[:, None, :]
    flat_idx, w, _inside = interp_weights(grid, pts)
    ts = np.where(mask, ts, 0.0)
    w = np.where(mask[..., None], w, 0.0)
    return MarchBatch(ts=ts, mask=mask, step=spec.step_size, flat_idx=flat_idx, corner_w=w)


def batch_sigma_rgb(grid: VoxelGrid, batch: MarchBatch):
    dens_flat = grid.density.ravel(order="F")
    col_flat = grid.color.reshape(-1, 3, order="F")
    # Plain last-axis sums keep the 8-corner accumulation order fixed, so the
    # depth path matches a sequential per-corner scan bit for bit.
    sigma = (dens_flat[batch.flat_idx] * batch.corner_w).sum(axis=-1)
    rgb = (col_flat[batch.flat_idx] * batch.corner_w[..., None]).sum(axis=-2)
    return sigma, rgb


def composite(sigma: np.ndarray, rgb: np.ndarray, step: float):
    """Alpha compositing. Returns (colors (B,3), weights (B,N), trans (B,N))."""
    tau = sigma * step
    alpha = 1.0 - np.exp(-tau)
    # Exclusive cumulative transmittance: T_1 = 1.
    trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
    weights = trans * alpha
    if weights.shape[1] == 0:
        colors = np.zeros((weights.shape[0], 3))
    else:
        # Sequential accumulation keeps a ray's color bit-identical no matter
        # how the batch is padded, so subset renders match full-view renders.
        colors = np.cumsum(weights[..., None] * rgb, axis=1)[:, -1]
    return colors, weights, trans


def render_rays(grid: VoxelGrid, origins, dirs, spec: SampleSpec) -> np.ndarray:
    """Batched Eq.-1 colors for rays given as (B, 3) origin/direction arrays."""
    batch = march_rays(grid, origins, dirs, spec)
    sigma, rgb = batch_sigma_rgb(grid, batch)
    colors, _, _ = composite(sigma, rgb, batch.step)
    return colors


def render_ray(grid: VoxelGrid, ray: Ray, spec: SampleSpec) -> np.ndarray:
    return render_rays(grid, ray.origin[None], ray.direction[None], spec)[0]


def ray_depths(grid: VoxelGrid, origins, dirs, spec: SampleSpec) -> np.ndarray:
    """Pseudo-depth per ray; NaN where the threshold is never reached."""
    batch = march_rays(grid, origins, dirs, spec)
    sigma, _rgb = batch_sigma_rgb(grid, batch)
    tau = sigma * batch.step
    prefix = np.cumsum(tau, axis=1) - tau  # excludes the current sample
    hit = (prefix >= spec.sigma_z) & batch.mask
    out = np.full(hit.shape[0], np.nan)
    if hit.shape[1] == 0:
        return out
    any_hit = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    rows = np.nonzero(any_hit)[0]
    out[rows] = batch.ts[rows, first[rows]]
    return out


def ray_depth(grid: VoxelGrid, ray: Ray, spec: SampleSpec) -> Optional[float]:
    l = ray_depths(grid, ray.origin[None], ray.direction[None], spec)[0]
    return None if np.isnan(l) else float(l)


def intersection_point(ray: Ray, length: float) -> np.ndarray:
    if length < 0:
        raise InputError("ray length must be non-negative")
    return ray.origin + length * ray.direction


def render_view(grid: VoxelGrid, camera: Camera, spec: SampleSpec) -> np.ndarray:
    """(H, W, 3) image; pixel (x, y) equals render_ray on its pixel ray."""
    o, d = camera_rays(camera)
    cols = render_rays(grid, o, d, spec)
    return cols.reshape(camera.height, camera.width, 3)


def render_depth(grid: VoxelGrid, camera: Camera, spec: SampleSpec) -> np.ndarray:
    """(H, W) pseudo-depth map, NaN where undefined."""
    o, d = camera_rays(camera)
    ls = ray_depths(grid, o, d, spec)
    return ls.reshape(camera.height, camera.width)


def backprop_color(
    grid: VoxelGrid, batch: MarchBatch, weights: np.ndarray, out_grad: np.ndarray
) -> np.ndarray:
    """d(loss)/d(voxel colors) given d(loss)/d(ray colors).

    out_grad: (B, 3). Returns an array shaped like grid.color (x-fastest
    flattened internally; deterministic accumulation via bincount).
    """
    nvox = grid.density.size
    coeff = weights[..., None] * batch.corner_w  # (B, N, 8)
    idx = batch.flat_idx.ravel()
    grad_flat = np.empty((nvox, 3))
    for ch in range(3):
        wch = (coeff * out_grad[:, None, None, ch]).ravel()
        grad_flat[:, ch] = np.bincount(idx, weights=wch, minlength=nvox)
    return grad_flat.reshape(grid.resolution + (3,), order="F")


def backprop_density(
    grid: VoxelGrid,
    batch: MarchBatch,
    sigma: np.ndarray,
    rgb: np.ndarray,
    weights: np.ndarray,
    trans: np.ndarray,
    out_grad: np.ndarray,
) -> np.ndarray:
    """d(loss)/d(voxel densities) given d(loss)/d(ray colors).

    Uses dC/dsigma_k = step * (T_{k+1} c_k - sum_{i>k} w_i c_i) chained
    through the trilinear weights.
    """
    nvox = grid.density.size
    cg = np.einsum("bnc,bc->bn", rgb, out_grad)  # c_i . g per sample
    wq = weights * cg
    suffix = np.cumsum(wq[:, ::-1], axis=1)[:, ::-1] - wq  # sum over i > k
    alpha = np.where(batch.mask, 1.0 - np.exp(-sigma * batch.step), 0.0)
    t_next = trans * (1.0 - alpha)
    dsig = batch.step * (t_next * cg - suffix)
    dsig = np.where(batch.mask, dsig, 0.0)
    wall = (dsig[..., None] * batch.corner_w).ravel()
    grad = np.bincount(batch.flat_idx.ravel(), weights=wall, minlength=nvox)
    return grad.reshape(grid.resolution, order="F")
