"""Independent brute-force reimplementations used as test oracles.

Everything here is deliberately scalar and simple-minded: per-ray python
loops, hand-rolled trilinear interpolation, cumulative-product
transmittance. None of it shares code with voxstyle.render.
"""

import numpy as np


def slab_span(bbox_min, bbox_max, o, d):
    t0, t1 = 0.0, np.inf
    for ax in range(3):
        if d[ax] == 0.0:
            if not (bbox_min[ax] <= o[ax] <= bbox_max[ax]):
                return 0.0, 0.0
            continue
        a = (bbox_min[ax] - o[ax]) / d[ax]
        b = (bbox_max[ax] - o[ax]) / d[ax]
        lo, hi = min(a, b), max(a, b)
        t0 = max(t0, lo)
        t1 = min(t1, hi)
    return t0, max(t1, t0)


def trilinear(grid, p):
    """Scalar trilinear lookup of (sigma, rgb) with edge clamping."""
    res = np.array(grid.resolution, dtype=np.float64)
    if np.any(p < grid.bbox_min) or np.any(p > grid.bbox_max):
        return 0.0, np.zeros(3)
    u = (p - grid.bbox_min) / grid.voxel_size - 0.5
    u = np.clip(u, 0.0, res - 1.0)
    base = np.minimum(np.floor(u).astype(int), np.maximum(res.astype(int) - 2, 0))
    f = np.clip(u - base, 0.0, 1.0)
    f = np.where(res == 1, 0.0, f)
    sigma = 0.0
    rgb = np.zeros(3)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                ix = min(base[0] + dx, grid.resolution[0] - 1)
                iy = min(base[1] + dy, grid.resolution[1] - 1)
                iz = min(base[2] + dz, grid.resolution[2] - 1)
                w = (
                    (f[0] if dx else 1.0 - f[0])
                    * (f[1] if dy else 1.0 - f[1])
                    * (f[2] if dz else 1.0 - f[2])
                )
                sigma += w * grid.density[ix, iy, iz]
                rgb += w * grid.color[ix, iy, iz]
    return sigma, rgb


def sample_ts(grid, o, d, spec):
    t0, t1 = slab_span(grid.bbox_min, grid.bbox_max, o, d)
    n = int(np.floor((t1 - t0) / spec.step_size))
    n = min(n, spec.max_samples)
    return [t0 + (i + 0.5) * spec.step_size for i in range(n)]


def render_ray_oracle(grid, o, d, spec):
    """Accumulated color via an explicit running product of attenuations."""
    color = np.zeros(3)
    transmittance = 1.0
    for t in sample_ts(grid, o, d, spec):
        sigma, rgb = trilinear(grid, o + t * d)
        att = np.exp(-sigma * spec.step_size)
        color += transmittance * (1.0 - att) * rgb
        transmittance *= att
    return color


def ray_depth_oracle(grid, o, d, spec):
    """First sample whose exclusive prefix sum of sigma*delta hits sigma_z."""
    prefix = 0.0
    for t in sample_ts(grid, o, d, spec):
        if prefix >= spec.sigma_z:
            return t
        sigma, _ = trilinear(grid, o + t * d)
        prefix += sigma * spec.step_size
    return None


def fd_gradient(fn, params, h=1e-5):
    """Central finite differences of scalar fn w.r.t. a flat float64 array."""
    g = np.zeros_like(params)
    for i in range(params.size):
        p = params.copy()
        p.flat[i] += h
        hi = fn(p)
        p = params.copy()
        p.flat[i] -= h
        lo = fn(p)
        g.flat[i] = (hi - lo) / (2.0 * h)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom
