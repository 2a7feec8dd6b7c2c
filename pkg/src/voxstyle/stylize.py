"""Stylized-field optimization: pseudo-ray supervision plus feature and
patch-color guidance, with the frozen-content schedule switch.

The stylized grid starts as a copy of the photoreal one; density stays
frozen throughout, only voxel colors move. Image-space losses use the
gradient-cache pattern: render the full view, form per-pixel gradients,
then re-walk each pixel ray to scatter them into voxel-color gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .camera import Camera, camera_rays
from .errors import EmptyRegistration, FitDivergence, InputError
from .features import (
    BuiltinDescriptor,
    ColorTargets,
    cell_mean,
    cell_mean_adjoint,
    deep_descriptor,
    downsample2,
    downsample2_adjoint,
    mid_descriptor,
    _unit_rows,
)
from .fit import AdamOptimizer
from .grid import VoxelGrid
from .registration import (
    DictConfig,
    PseudoRaySet,
    build_dictionary,
    collect_pseudo_rays,
    erode_mask,
)
from .render import SampleSpec, backprop_color, batch_sigma_rgb, composite, march_rays, render_view


@dataclass
class LossWeights:
    """Balances of the three loss terms plus the content-preservation factor
    inside the feature loss."""

    lambda_r: float = 1.0
    lambda_f: float = 1.0
    lambda_c: float = 5.0
    lambda_prime: float = 5.0e-3

    def __post_init__(self):
        for name in ("lambda_r", "lambda_f", "lambda_c", "lambda_prime"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")


@dataclass
class StyleConfig:
    epochs: int = 10
    frozen_content_epoch: int = 7  # final (epochs - this) epochs run frozen
    frozen_lambda_f: float = 0.2
    pseudo_ray_batch: int = 4096  # per optimizer step; paper-scale runs use 1e6
    ref_fraction: float = 0.5
    learning_rate: float = 0.01
    # larger-than-usual Adam eps: gradients at the registration noise floor
    # step proportionally instead of by sign, so fixed points stay put
    adam_eps: float = 1.0e-3
    freeze_density: bool = True
    half_res: bool = False
    mask_erosion_radius: int = 2
    color_gate: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.frozen_content_epoch <= self.epochs):
            raise InputError("frozen_content_epoch must be in (0, epochs]")
        if not (0.0 <= self.ref_fraction <= 1.0):
            raise InputError("ref_fraction must lie in [0, 1]")
        if not self.freeze_density:
            raise InputError("density optimization is unsupported; freeze_density must stay true")


# -- loss terms ---------------------------------------------------------------


def reference_loss_grads(
    grid: VoxelGrid, origins: np.ndarray, dirs: np.ndarray, targets: np.ndarray, spec: SampleSpec
):
    """Mean squared pseudo-ray color error and its voxel-color gradient."""
    if origins.shape[0] == 0:
        raise InputError("reference loss needs a non-empty batch")
    batch = march_rays(grid, origins, dirs, spec)
    sigma, rgb = batch_sigma_rgb(grid, batch)
    colors, weights, _ = composite(sigma, rgb, batch.step)
    resid = colors - targets
    n = origins.shape[0]
    loss = float(np.sum(resid * resid)) / n
    out_grad = (2.0 / n) * resid
    return loss, backprop_color(grid, batch, weights, out_grad)


def feature_loss(
    f_hat: np.ndarray, f_guidance: np.ndarray, f_content: np.ndarray, lambda_prime: float
):
    """Per-cell cosine distance to the guidance plus an L2 content term.

    Gradients flow only through ``f_hat``; guidance and content stacks are
    constants. Returns (loss, d_loss/d_f_hat).
    """
    if f_hat.shape != f_guidance.shape or f_hat.shape != f_content.shape:
        raise InputError(
            f"feature stacks disagree: {f_hat.shape} / {f_guidance.shape} / {f_content.shape}"
        )
    gh, gw, c = f_hat.shape
    n = gh * gw
    f = f_hat.reshape(n, c).astype(np.float64)
    g = f_guidance.reshape(n, c).astype(np.float64)
    ci = f_content.reshape(n, c).astype(np.float64)

    nf = np.linalg.norm(f, axis=1)
    ng = np.linalg.norm(g, axis=1)
    ok = (nf > 0.0) & (ng > 0.0)
    safe_nf = np.where(ok, nf, 1.0)
    safe_ng = np.where(ok, ng, 1.0)
    dots = np.sum(f * g, axis=1)
    cos = np.where(ok, dots / (safe_nf * safe_ng), 0.0)
    dist = np.where(ok, 1.0 - cos, 1.0)
    # Identical cells sit exactly at the stationary point; zero them outright
    # so fixed-point configurations stay bit-stable.
    same = ok & np.all(f == g, axis=1)
    dist = np.where(same, 0.0, dist)

    sq = np.sum((ci - f) ** 2, axis=1)
    loss = float(np.mean(dist + lambda_prime * sq))

    # d dist / d f = -(g_hat - cos * f_hat) / |f|
    f_hat_unit = f / safe_nf[:, None]
    g_hat_unit = g / safe_ng[:, None]
    d_dist = -(g_hat_unit - cos[:, None] * f_hat_unit) / safe_nf[:, None]
    d_dist[~ok] = 0.0
    d_dist[same] = 0.0
    d_f = (d_dist + 2.0 * lambda_prime * (f - ci)) / n
    return loss, d_f.reshape(gh, gw, c)


def color_loss(rendered: np.ndarray, targets):
    """Patch-mean color matching against gated targets.

    ``targets`` is a ColorTargets; invalid cells contribute nothing.
    Returns (loss, d_loss/d_pixels).
    """
    h, w = rendered.shape[:2]
    if targets.source_dims != (h, w):
        raise InputError(
            f"color targets were built for {targets.source_dims}, image is {(h, w)}"
        )
    means = cell_mean(rendered, targets.stride)
    n = means.shape[0] * means.shape[1]
    diff = np.where(targets.valid[..., None], means - targets.targets, 0.0)
    loss = float(np.sum(diff * diff)) / n
    d_means = (2.0 / n) * diff
    d_pixels = cell_mean_adjoint(d_means, targets.stride, h, w)
    return loss, d_pixels


def image_grad_backprop(
    pixel_grads: np.ndarray, camera: Camera, grid: VoxelGrid, spec: SampleSpec
) -> np.ndarray:
    """Scatter cached per-pixel gradients into voxel-color gradients by
    re-marching every pixel ray."""
    if pixel_grads.shape[:2] != (camera.height, camera.width):
        raise InputError("pixel gradient dimensions must match the camera")
    o, d = camera_rays(camera)
    batch = march_rays(grid, o, d, spec)
    sigma, rgb = batch_sigma_rgb(grid, batch)
    _, weights, _ = composite(sigma, rgb, batch.step)
    return backprop_color(grid, batch, weights, pixel_grads.reshape(-1, 3))


# -- matching banks -----------------------------------------------------------


def _bank_match(content_cells: np.ndarray, bank_cells: np.ndarray, gate: Optional[float] = None):
    """Arg-min cosine match of content cells against a flat reference bank.

    Bank order fixes tie-breaking (first index wins on exact ties).
    Returns (indices (N,), distances (N,), valid (N,)).
    """
    a = _unit_rows(np.asarray(content_cells, dtype=np.float64))
    b = _unit_rows(np.asarray(bank_cells, dtype=np.float64))
    d = 1.0 - a @ b.T
    a_zero = ~np.any(a != 0.0, axis=1)
    b_zero = ~np.any(b != 0.0, axis=1)
    d[a_zero, :] = 1.0
    d[:, b_zero] = 1.0
    np.clip(d, 0.0, 2.0, out=d)
    idx = np.argmin(d, axis=1)
    dist = d[np.arange(d.shape[0]), idx]
    valid = np.ones(d.shape[0], dtype=bool) if gate is None else dist < gate
    return idx, dist, valid


def _map_cells_column_major(data: np.ndarray) -> np.ndarray:
    """(gh, gw, C) -> (gh*gw, C) in the same column-major order used by
    match_features, so bank matching reproduces its tie-breaks."""
    return np.transpose(data, (1, 0, 2)).reshape(-1, data.shape[2])


@dataclass
class _ViewGuidance:
    f_content: np.ndarray  # builtin mid features of the content view (f64)
    f_guidance: np.ndarray  # gathered style features (f64)
    color_targets: object  # ColorTargets or None after the frozen switch


@dataclass
class StylizeResult:
    grid: VoxelGrid
    log: list
    n_pseudo: int
    registered_per_view: dict
    init_ref_loss: float = float("nan")  # full pseudo-set loss before training
    final_ref_loss: float = float("nan")  # same measure after training


def stylize(
    photo_grid: VoxelGrid,
    refs: list,
    cameras: list[Camera],
    spec: SampleSpec,
    style_config: Optional[StyleConfig] = None,
    dict_config: Optional[DictConfig] = None,
    weights: Optional[LossWeights] = None,
    mid: Optional[BuiltinDescriptor] = None,
    deep: Optional[BuiltinDescriptor] = None,
    matching_provider=None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> StylizeResult:
    """Optimize a stylized copy of ``photo_grid`` against the references.

    refs: list of (Camera, style image, optional raw foreground mask).
    cameras: training camera poses (content views render from the photoreal
    grid). ``matching_provider``, when given, supplies the feature maps used
    for matching (e.g. exported external maps keyed by view id); training
    features always come from the differentiable built-in descriptor.
    """
    cfg = style_config or StyleConfig()
    wts = weights or LossWeights()
    dcfg = (dict_config or DictConfig()).with_bbox_from(photo_grid)
    mid = mid or mid_descriptor()
    deep = deep or deep_descriptor()
    rng = np.random.default_rng(cfg.seed)

    eroded_refs = []
    for cam, style_img, mask in refs:
        m = erode_mask(mask, cfg.mask_erosion_radius) if mask is not None else None
        eroded_refs.append((cam, np.asarray(style_img, dtype=np.float64), m))

    dictionary = build_dictionary(photo_grid, eroded_refs, spec, dcfg)
    ref_cams = [cam for cam, _, _ in eroded_refs]
    all_query_cams = ref_cams + [c for c in cameras if all(c is not r for r in ref_cams)]
    pseudo = collect_pseudo_rays(dictionary, photo_grid, all_query_cams, spec)
    if len(pseudo) == 0:
        raise EmptyRegistration(
            "no pseudo-rays registered: check that the field has occupancy and "
            "consider a lower cos_threshold or sigma_z"
        )

    ref_ids = {cam.view_id or f"ref{i}" for i, cam in enumerate(ref_cams)}
    from_ref = np.array([s in ref_ids for s in pseudo.source_ids], dtype=bool)
    idx_ref = np.nonzero(from_ref)[0]
    idx_other = np.nonzero(~from_ref)[0]

    style_grid = photo_grid.copy()
    opt = AdamOptimizer(style_grid.color.shape, cfg.learning_rate, eps=cfg.adam_eps)
    init_ref_loss, _ = reference_loss_grads(
        style_grid, pseudo.origins, pseudo.directions, pseudo.colors, spec
    )

    maybe_half = (lambda im: downsample2(im)) if cfg.half_res else (lambda im: im)

    def prep_views(content_grid: VoxelGrid, want_color: bool):
        """Render content views and precompute guidance for every camera."""
        ref_contents = [maybe_half(render_view(content_grid, cam, spec)) for cam in ref_cams]
        ref_styles = [maybe_half(img) for _, img, _ in eroded_refs]
        # Matching banks: column-major cells per reference, refs concatenated.
        if matching_provider is not None:
            mid_bank = np.concatenate(
                [
                    _map_cells_column_major(
                        matching_provider.mid_map(cam.view_id or f"ref{i}").data.astype(np.float64)
                    )
                    for i, cam in enumerate(ref_cams)
                ]
            )
            deep_bank = np.concatenate(
                [
                    _map_cells_column_major(
                        matching_provider.deep_map(cam.view_id or f"ref{i}").data.astype(np.float64)
                    )
                    for i, cam in enumerate(ref_cams)
                ]
            )
        else:
            mid_bank = np.concatenate(
                [_map_cells_column_major(mid.features_f64(rc)) for rc in ref_contents]
            )
            deep_bank = np.concatenate(
                [_map_cells_column_major(deep.features_f64(rc)) for rc in ref_contents]
            )
        style_mid_bank = np.concatenate(
            [_map_cells_column_major(mid.features_f64(rs)) for rs in ref_styles]
        )
        style_color_bank = np.concatenate(
            [_map_cells_column_major(cell_mean(rs, deep.stride)) for rs in ref_styles]
        )
        guidance = []
        for cam in cameras:
            view = maybe_half(render_view(content_grid, cam, spec))
            f_i = mid.features_f64(view)
            gh, gw, c = f_i.shape
            if matching_provider is not None:
                f_i_match = matching_provider.mid_map(cam.view_id).data.astype(np.float64)
                if f_i_match.shape[:2] != (gh, gw):
                    raise InputError(
                        f"external mid map grid {f_i_match.shape[:2]} does not match view grid {(gh, gw)}"
                    )
            else:
                f_i_match = f_i
            idx, _, _ = _bank_match(_map_cells_column_major(f_i_match), mid_bank)
            f_g = style_mid_bank[idx]
            # invert the column-major flattening back to (gh, gw, C)
            f_g = f_g.reshape(gw, gh, style_mid_bank.shape[1]).transpose(1, 0, 2)
            ct = None
            if want_color:
                if matching_provider is not None:
                    f_deep = matching_provider.deep_map(cam.view_id).data.astype(np.float64)
                else:
                    f_deep = deep.features_f64(view)
                dgh, dgw = f_deep.shape[:2]
                didx, ddist, dvalid = _bank_match(
                    _map_cells_column_major(f_deep), deep_bank, gate=cfg.color_gate
                )
                targets = style_color_bank[didx].reshape(dgw, dgh, 3).transpose(1, 0, 2)
                valid = dvalid.reshape(dgw, dgh).T
                ct = ColorTargets(
                    targets=targets,
                    valid=valid,
                    stride=deep.stride,
                    source_dims=view.shape[:2],
                )
            guidance.append(_ViewGuidance(f_content=f_i, f_guidance=f_g, color_targets=ct))
        return guidance

    guidance = prep_views(photo_grid, want_color=True)
    lambda_f = wts.lambda_f
    lambda_prime = wts.lambda_prime
    use_color = True

    log = []
    it = 0
    for epoch in range(cfg.epochs):
        if epoch == cfg.frozen_content_epoch:
            frozen = style_grid.copy()
            guidance = prep_views(frozen, want_color=False)
            lambda_f = cfg.frozen_lambda_f
            lambda_prime = 0.0
            use_color = False
        ep = {"epoch": epoch, "loss_ref": 0.0, "loss_feat": 0.0, "loss_color": 0.0, "steps": 0}
        for vi, cam in enumerate(cameras):
            grad = np.zeros_like(style_grid.color)
            # pseudo-ray term on a fresh sample
            n_ref = int(round(cfg.pseudo_ray_batch * cfg.ref_fraction))
            n_oth = cfg.pseudo_ray_batch - n_ref
            picks = []
            if idx_ref.size == 0:
                n_oth = cfg.pseudo_ray_batch
                n_ref = 0
            if idx_other.size == 0:
                n_ref = cfg.pseudo_ray_batch
                n_oth = 0
            if n_ref:
                picks.append(rng.choice(idx_ref, size=n_ref, replace=True))
            if n_oth:
                picks.append(rng.choice(idx_other, size=n_oth, replace=True))
            pick = np.concatenate(picks)
            o, d, t = pseudo.subset(pick)
            l_ref, g_ref = reference_loss_grads(style_grid, o, d, t, spec)
            grad += wts.lambda_r * g_ref

            rendered = render_view(style_grid, cam, spec)
            work = maybe_half(rendered)
            g_view = guidance[vi]
            d_pixels = np.zeros_like(work)
            f_hat = mid.features_f64(work)
            l_feat, d_fhat = feature_loss(f_hat, g_view.f_guidance, g_view.f_content, lambda_prime)
            d_pixels += lambda_f * mid.vjp(work, d_fhat)
            l_color = 0.0
            if use_color and g_view.color_targets is not None:
                l_color, d_col = color_loss(work, g_view.color_targets)
                d_pixels += wts.lambda_c * d_col
            if cfg.half_res:
                d_pixels = downsample2_adjoint(d_pixels, rendered.shape[0], rendered.shape[1])
            grad += image_grad_backprop(d_pixels, cam, style_grid, spec)

            total = wts.lambda_r * l_ref + lambda_f * l_feat + wts.lambda_c * l_color
            if not np.isfinite(total):
                raise FitDivergence("stylization loss became non-finite", it)
            opt.step(style_grid.color, grad)
            np.clip(style_grid.color, 0.0, 1.0, out=style_grid.color)
            it += 1
            ep["loss_ref"] += l_ref
            ep["loss_feat"] += l_feat
            ep["loss_color"] += l_color
            ep["steps"] += 1
        for k in ("loss_ref", "loss_feat", "loss_color"):
            ep[k] /= max(ep["steps"], 1)
        log.append(ep)
        if on_epoch is not None:
            on_epoch(ep)

    reg_per_view: dict = {}
    for s in pseudo.source_ids:
        reg_per_view[s] = reg_per_view.get(s, 0) + 1
    final_ref_loss, _ = reference_loss_grads(
        style_grid, pseudo.origins, pseudo.directions, pseudo.colors, spec
    )
    return StylizeResult(
        grid=style_grid,
        log=log,
        n_pseudo=len(pseudo),
        registered_per_view=reg_per_view,
        init_ref_loss=init_ref_loss,
        final_ref_loss=final_ref_loss,
    )
