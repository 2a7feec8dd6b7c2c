"""Reference ray registration: project stylized reference pixels into a
quantized 3D dictionary via pseudo-depth, then register training-view rays
against it to build pseudo-ray supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .camera import Camera, Ray, camera_rays
from .errors import InputError
from .grid import VoxelGrid
from .render import SampleSpec, ray_depth, ray_depths

DEFAULT_DICT_RESOLUTION = 256
DEFAULT_CAPACITY = 8
DEFAULT_COS_THRESHOLD = 0.6


@dataclass
class DictConfig:
    """Quantizer setup for the reference dictionary.

    resolution: cells per axis. capacity: max rays kept per cell.
    cos_threshold: matched ray directions must satisfy dot > cos_threshold.
    bbox defaults to the field's bbox when the dictionary is built.
    """

    resolution: int = DEFAULT_DICT_RESOLUTION
    capacity: int = DEFAULT_CAPACITY
    cos_threshold: float = DEFAULT_COS_THRESHOLD
    bbox_min: Optional[np.ndarray] = None
    bbox_max: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.resolution < 1:
            raise InputError("dictionary resolution must be >= 1")
        if self.capacity < 1:
            raise InputError("dictionary capacity must be >= 1")
        if not -1.0 <= self.cos_threshold <= 1.0:
            raise InputError("cos_threshold must lie in [-1, 1]")
        if self.bbox_min is not None:
            self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        if self.bbox_max is not None:
            self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)

    def with_bbox_from(self, grid: VoxelGrid) -> "DictConfig":
        return DictConfig(
            resolution=self.resolution,
            capacity=self.capacity,
            cos_threshold=self.cos_threshold,
            bbox_min=self.bbox_min if self.bbox_min is not None else grid.bbox_min.copy(),
            bbox_max=self.bbox_max if self.bbox_max is not None else grid.bbox_max.copy(),
        )


def quantize(point, config: DictConfig):
    """Map a world point to its dictionary cell, or None outside the bbox."""
    idx, inside = quantize_points(np.asarray(point, dtype=np.float64)[None, :], config)
    if not inside[0]:
        return None
    return tuple(int(v) for v in idx[0])


def quantize_points(points: np.ndarray, config: DictConfig):
    """Vectorized quantizer: (indices (N, 3), inside (N,))."""
    if config.bbox_min is None or config.bbox_max is None:
        raise InputError("DictConfig bbox is unset; call with_bbox_from(grid) first")
    pts = np.asarray(points, dtype=np.float64)
    inside = np.all((pts >= config.bbox_min) & (pts <= config.bbox_max), axis=-1)
    rel = (pts - config.bbox_min) / (config.bbox_max - config.bbox_min)
    idx = np.floor(rel * config.resolution).astype(np.int64)
    np.clip(idx, 0, config.resolution - 1, out=idx)
    return idx, inside


@dataclass
class DictRecord:
    """One reference ray stored in a dictionary cell."""

    origin: np.ndarray
    direction: np.ndarray
    color: np.ndarray
    point: np.ndarray
    view_id: str
    pixel: tuple[int, int]
    order: tuple[int, int, int]  # (view index, y, x) insertion key


@dataclass
class ReferenceDictionary:
    config: DictConfig
    entries: dict = field(default_factory=dict)
    n_refs: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def total_rays(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def record_ray(self, rec: DictRecord) -> Ray:
        return Ray(origin=rec.origin, direction=rec.direction, pixel=rec.pixel, view_id=rec.view_id)


@dataclass
class RegisteredMatch:
    ray: Ray
    color: np.ndarray
    distance: float
    cosine: float
    cell: tuple[int, int, int]


@dataclass
class PseudoRaySet:
    """Registered training rays with their assigned reference colors."""

    origins: np.ndarray  # (M, 3)
    directions: np.ndarray  # (M, 3)
    colors: np.ndarray  # (M, 3)
    source_ids: list  # view id the query ray came from, per item
    pixels: np.ndarray  # (M, 2) x, y
    by_source: dict = field(default_factory=dict)  # view id -> index array

    def __len__(self) -> int:
        return self.origins.shape[0]

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.origins[idx], self.directions[idx], self.colors[idx]


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1)^2 square element; radius 0 is identity."""
    if radius < 0:
        raise InputError("erosion radius must be >= 0")
    if radius == 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_erosion(mask, structure=structure, border_value=0)


def build_dictionary(
    grid: VoxelGrid,
    refs: list[tuple[Camera, np.ndarray, Optional[np.ndarray]]],
    spec: SampleSpec,
    config: DictConfig,
) -> ReferenceDictionary:
    """Insert every reference pixel with a valid pseudo-depth (and, when a
    mask is given, inside it) at the quantized intersection cell.

    Insertion runs view by view in scanline order, so capacity keeps the
    first rays under that ordering. Cells never exceed ``capacity`` rays.
    """
    config = config.with_bbox_from(grid)
    d = ReferenceDictionary(config=config, n_refs=len(refs))
    for vi, (cam, image, mask) in enumerate(refs):
        if image.shape[:2] != (cam.height, cam.width):
            raise InputError("reference image dimensions must match its camera")
        if mask is not None and mask.shape != (cam.height, cam.width):
            raise InputError("reference mask dimensions must match its camera")
        o, dirs = camera_rays(cam)
        depths = ray_depths(grid, o, dirs, spec)
        valid = np.isfinite(depths)
        if mask is not None:
            valid &= mask.reshape(-1)
        pts = o + depths[:, None] * dirs
        keys = np.full(o.shape[0], -1, dtype=np.int64)
        if valid.any():
            idx, inside = quantize_points(pts[valid], config)
            flat = np.where(
                inside,
                idx[:, 0]
                + config.resolution * (idx[:, 1] + config.resolution * idx[:, 2]),
                -1,
            )
            keys[np.nonzero(valid)[0]] = flat
        colors = image.reshape(-1, 3)
        view_id = cam.view_id or f"ref{vi}"
        w = cam.width
        for k in np.nonzero(keys >= 0)[0]:
            key = int(keys[k])
            cell = (
                key % config.resolution,
                (key // config.resolution) % config.resolution,
                key // (config.resolution * config.resolution),
            )
            bucket = d.entries.setdefault(cell, [])
            if len(bucket) >= config.capacity:
                continue
            py, px = divmod(int(k), w)
            bucket.append(
                DictRecord(
                    origin=o[k],
                    direction=dirs[k],
                    color=colors[k].copy(),
                    point=pts[k],
                    view_id=view_id,
                    pixel=(px, py),
                    order=(vi, py, px),
                )
            )
    return d


def _best_candidate(d: ReferenceDictionary, cell, point, direction):
    bucket = d.entries.get(cell)
    if not bucket:
        return None
    best = None
    best_key = None
    for rec in bucket:
        cosine = float(np.dot(rec.direction, direction))
        if cosine <= d.config.cos_threshold:
            continue
        dist = float(np.linalg.norm(rec.point - point))
        key = (dist, rec.order)
        if best_key is None or key < best_key:
            best_key = key
            best = (rec, dist, cosine)
    return best


def register_ray(
    d: ReferenceDictionary, grid: VoxelGrid, ray: Ray, spec: SampleSpec
) -> Optional[RegisteredMatch]:
    """Best same-cell reference ray under the direction gate, by intersection
    distance; None when depth is invalid, the cell is empty or out of bbox,
    or every candidate fails the angle test. Ties break on insertion order.
    """
    l = ray_depth(grid, ray, spec)
    if l is None:
        return None
    point = ray.origin + l * ray.direction
    cell = quantize(point, d.config)
    if cell is None:
        return None
    found = _best_candidate(d, cell, point, ray.direction)
    if found is None:
        return None
    rec, dist, cosine = found
    return RegisteredMatch(ray=d.record_ray(rec), color=rec.color.copy(), distance=dist, cosine=cosine, cell=cell)


def collect_pseudo_rays(
    d: ReferenceDictionary,
    grid: VoxelGrid,
    cameras: list[Camera],
    spec: SampleSpec,
    debug_rows: Optional[list] = None,
) -> PseudoRaySet:
    """Register every pixel ray of every camera; keep the successes.

    ``debug_rows``, when given, receives one tuple per successful match:
    (view_id, px, py, cx, cy, cz, distance, cosine).
    """
    origins, directions, colors, sources, pixels = [], [], [], [], []
    res = d.config.resolution
    for ci, cam in enumerate(cameras):
        view_id = cam.view_id or f"cam{ci}"
        o, dirs = camera_rays(cam)
        depths = ray_depths(grid, o, dirs, spec)
        valid = np.isfinite(depths)
        if not valid.any():
            continue
        pts = o + np.where(valid, depths, 0.0)[:, None] * dirs
        idx, inside = quantize_points(pts, d.config)
        usable = valid & inside
        w = cam.width
        for k in np.nonzero(usable)[0]:
            cell = (int(idx[k, 0]), int(idx[k, 1]), int(idx[k, 2]))
            found = _best_candidate(d, cell, pts[k], dirs[k])
            if found is None:
                continue
            rec, dist, cosine = found
            py, px = divmod(int(k), w)
            origins.append(o[k])
            directions.append(dirs[k])
            colors.append(rec.color)
            sources.append(view_id)
            pixels.append((px, py))
            if debug_rows is not None:
                debug_rows.append((view_id, px, py, *cell, dist, cosine))
    if origins:
        origins = np.stack(origins)
        directions = np.stack(directions)
        colors = np.stack(colors)
        pixels = np.asarray(pixels, dtype=np.int64)
    else:
        origins = np.zeros((0, 3))
        directions = np.zeros((0, 3))
        colors = np.zeros((0, 3))
        pixels = np.zeros((0, 2), dtype=np.int64)
    by_source: dict = {}
    for i, s in enumerate(sources):
        by_source.setdefault(s, []).append(i)
    by_source = {k: np.asarray(v, dtype=np.int64) for k, v in by_source.items()}
    return PseudoRaySet(
        origins=origins,
        directions=directions,
        colors=colors,
        source_ids=sources,
        pixels=pixels,
        by_source=by_source,
    )
