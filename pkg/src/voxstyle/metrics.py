"""Quantitative evaluation: PSNR, the re-stylization robustness protocol,
and a descriptor-based reference-similarity score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .camera import Camera
from .errors import InputError
from .grid import VoxelGrid
from .render import SampleSpec, render_view

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1/MSE) for [0,1] images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


@dataclass
class EvalReport:
    per_view_psnr: list = field(default_factory=list)
    mean_psnr: float = float("nan")
    per_view_similarity: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_view_psnr": self.per_view_psnr,
            "mean_psnr": self.mean_psnr,
            "per_view_similarity": self.per_view_similarity,
            "errors": self.errors,
            "config": self.config,
        }


def robustness_protocol(
    stylized: VoxelGrid,
    cameras: list[Camera],
    stylize_fn: Callable[[Camera, np.ndarray], VoxelGrid],
    spec: SampleSpec,
    path_cameras: Optional[list[Camera]] = None,
) -> EvalReport:
    """Re-stylize from the field's own renders and measure reproduction.

    Each listed camera's render becomes a new reference; ``stylize_fn`` maps
    (camera, reference image) to a freshly stylized grid, whose renders over
    the shared path are compared to the original field's renders.
    """
    if not cameras:
        raise InputError("robustness protocol needs at least one camera")
    path = path_cameras or cameras
    base_renders = [render_view(stylized, cam, spec) for cam in path]
    report = EvalReport()
    for k, cam in enumerate(cameras):
        reference = render_view(stylized, cam, spec)
        name = cam.view_id or f"view{k}"
        try:
            regrid = stylize_fn(cam, reference)
        except Exception as exc:  # record and continue per protocol
            report.errors[name] = f"{type(exc).__name__}: {exc}"
            report.per_view_psnr.append(float("nan"))
            continue
        vals = [psnr(render_view(regrid, pc, spec), base) for pc, base in zip(path, base_renders)]
        report.per_view_psnr.append(float(np.mean(vals)))
    finite = [v for v in report.per_view_psnr if np.isfinite(v)]
    report.mean_psnr = float(np.mean(finite)) if finite else float("nan")
    return report


def image_feature_distance(a: np.ndarray, b: np.ndarray, extractor) -> float:
    """Mean per-cell cosine distance between two images' feature maps."""
    from .features import cosine_distance_maps

    fa = extractor.extract(a)
    fb = extractor.extract(b)
    return cosine_distance_maps(fa, fb)


def ref_similarity(
    views: list[np.ndarray],
    style_reference: np.ndarray,
    extractor,
    k: int = 10,
    view_cameras: Optional[list[Camera]] = None,
    reference_camera: Optional[Camera] = None,
) -> float:
    """Mean feature distance between the k nearest-pose views and the
    reference. Nearness ranks by camera-center distance when cameras are
    given, otherwise the first k views are used.
    """
    if not views:
        raise InputError("ref_similarity needs at least one view")
    order = list(range(len(views)))
    if view_cameras is not None and reference_camera is not None:
        dists = [np.linalg.norm(c.pose_t - reference_camera.pose_t) for c in view_cameras]
        order = list(np.argsort(dists, kind="stable"))
    if len(views) < k:
        warnings.warn(f"ref_similarity: only {len(views)} views for k={k}; using all")
    chosen = order[: min(k, len(views))]
    vals = [image_feature_distance(views[i], style_reference, extractor) for i in chosen]
    return float(np.mean(vals))
