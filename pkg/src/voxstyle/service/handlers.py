"""Operation handlers behind the service endpoints. The CLI calls these
directly when running without a server, so every subcommand and route share
one implementation.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..camera import Camera, camera_rays
from ..dataset import load_cameras, load_dataset, load_image, load_mask, save_image
from ..errors import InputError
from ..features import mid_descriptor
from ..fit import fit_photoreal
from ..grid import load_grid, save_grid
from ..metrics import ref_similarity, robustness_protocol
from ..registration import build_dictionary, collect_pseudo_rays
from ..render import ray_depths, render_depth, render_view
from ..stylize import stylize
from ..toy import generate_toy_dataset
from . import models


def gen_toy(req: models.GenToyRequest) -> models.GenToyResponse:
    info = generate_toy_dataset(
        req.out_dir,
        res=req.resolution,
        n_train=req.n_train,
        n_test=req.n_test,
        width=req.width,
        height=req.height,
    )
    return models.GenToyResponse(**info)


def fit(req: models.FitRequest) -> models.FitResponse:
    cfg = req.config
    dataset = load_dataset(req.dataset_dir)
    init = cfg.init_grid()
    spec = cfg.sample_spec(init)
    losses: list[float] = []
    out = fit_photoreal(
        dataset, init, cfg.fit_config(), spec=spec, on_epoch=lambda e, l: losses.append(l)
    )
    Path(req.out_grid).parent.mkdir(parents=True, exist_ok=True)
    save_grid(out, req.out_grid)
    return models.FitResponse(out_grid=req.out_grid, epoch_losses=losses, config=cfg)


def render(req: models.RenderRequest) -> models.RenderResponse:
    from ..features import FeatureMap, save_feature_map

    grid = load_grid(req.grid)
    spec = req.config.sample_spec(grid)
    cams = load_cameras(req.transforms)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, depths = [], []
    for k, cam in enumerate(cams):
        name = cam.view_id or f"view_{k:03d}"
        img = render_view(grid, cam, spec)
        img_path = out_dir / f"{name}.png"
        save_image(img, img_path)
        images.append(str(img_path))
        if req.depth:
            dep = render_depth(grid, cam, spec)
            # depth stored as a single-channel stride-1 feature map; absent
            # depths write as 0 and carry a companion validity is implied by 0
            dep_path = out_dir / f"{name}_depth.rnfm"
            payload = np.nan_to_num(dep, nan=0.0).astype(np.float32)[..., None]
            save_feature_map(
                FeatureMap(data=payload, stride=1, source_dims=dep.shape), dep_path
            )
            depths.append(str(dep_path))
    return models.RenderResponse(images=images, depths=depths, config=req.config)


def _load_refs(refs: list[models.RefSpec]):
    out = []
    for spec in refs:
        cams = load_cameras(spec.transforms)
        match = [c for c in cams if c.view_id == spec.view_id]
        if not match:
            raise InputError(f"view_id {spec.view_id!r} not found in {spec.transforms}")
        cam = match[0]
        style = load_image(spec.style_image)
        if style.shape[:2] != (cam.height, cam.width):
            raise InputError(
                f"style image {spec.style_image} is {style.shape[:2]}, camera wants "
                f"{(cam.height, cam.width)}"
            )
        mask = load_mask(spec.mask) if spec.mask else None
        out.append((cam, style, mask))
    return out


def register(req: models.RegisterRequest) -> models.RegisterResponse:
    grid = load_grid(req.grid)
    cfg = req.config
    spec = cfg.sample_spec(grid)
    refs = _load_refs(req.refs)
    dcfg = cfg.dict_config().with_bbox_from(grid)
    dictionary = build_dictionary(grid, refs, spec, dcfg)
    cams = load_cameras(req.cameras_transforms)
    ref_cams = [cam for cam, _, _ in refs]
    all_cams = ref_cams + [c for c in cams if c.view_id not in {r.view_id for r in ref_cams}]
    rows: list = []
    pseudo = collect_pseudo_rays(dictionary, grid, all_cams, spec, debug_rows=rows)
    per_view = {k: int(v.size) for k, v in pseudo.by_source.items()}

    # self-registration rate for the first reference camera
    ref_cam = ref_cams[0]
    o, d = camera_rays(ref_cam)
    valid = int(np.isfinite(ray_depths(grid, o, d, spec)).sum())
    got = per_view.get(ref_cam.view_id or "ref0", 0)
    rate = got / valid if valid else 0.0

    csv_path = None
    if req.out_debug_csv:
        csv_path = req.out_debug_csv
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["view_id", "px", "py", "cell_x", "cell_y", "cell_z", "distance", "cosine"])
            w.writerows(rows)
    return models.RegisterResponse(
        dict_entries=len(dictionary),
        dict_rays=dictionary.total_rays(),
        n_pseudo=len(pseudo),
        pseudo_per_view=per_view,
        registration_rate_reference=rate,
        out_debug_csv=csv_path,
        config=cfg,
    )


def _external_provider(cfg):
    if cfg.extractor == "builtin":
        return None
    from ..features import ExternalFeatureProvider

    class _Pair:
        def __init__(self, directory):
            self._mid = ExternalFeatureProvider(directory, mode="mid")
            self._deep = ExternalFeatureProvider(directory, mode="deep")

        def mid_map(self, key):
            return self._mid.extract_named(key)

        def deep_map(self, key):
            return self._deep.extract_named(key)

    return _Pair(cfg.extractor)


def stylize_run(req: models.StylizeRequest) -> models.StylizeResponse:
    grid = load_grid(req.grid)
    cfg = req.config
    spec = cfg.sample_spec(grid)
    refs = _load_refs(req.refs)
    cams = load_cameras(req.cameras_transforms)
    result = stylize(
        grid,
        refs,
        cams,
        spec,
        style_config=cfg.style_config(),
        dict_config=cfg.dict_config(),
        weights=cfg.loss_weights(),
        matching_provider=_external_provider(cfg),
    )
    Path(req.out_grid).parent.mkdir(parents=True, exist_ok=True)
    save_grid(result.grid, req.out_grid)
    if req.out_log:
        Path(req.out_log).parent.mkdir(parents=True, exist_ok=True)
        Path(req.out_log).write_text(
            json.dumps(
                {
                    "epochs": result.log,
                    "n_pseudo": result.n_pseudo,
                    "init_ref_loss": result.init_ref_loss,
                    "final_ref_loss": result.final_ref_loss,
                    "config": cfg.model_dump(),
                },
                indent=1,
            )
        )
    return models.StylizeResponse(
        out_grid=req.out_grid,
        n_pseudo=result.n_pseudo,
        init_ref_loss=result.init_ref_loss,
        final_ref_loss=result.final_ref_loss,
        log=result.log,
        config=cfg,
    )


def evaluate(req: models.EvalRequest) -> models.EvalResponse:
    style_grid = load_grid(req.style_grid)
    photo_grid = load_grid(req.photo_grid)
    cfg = req.config
    spec = cfg.sample_spec(style_grid)
    refs = _load_refs(req.refs)
    cams = load_cameras(req.cameras_transforms)

    def restylize(cam: Camera, reference: np.ndarray):
        return stylize(
            photo_grid,
            [(cam, reference, None)],
            cams,
            spec,
            style_config=cfg.style_config(),
            dict_config=cfg.dict_config(),
            weights=cfg.loss_weights(),
        ).grid

    rob_cams = [cam for cam, _, _ in refs][: req.robustness_views]
    if len(rob_cams) < req.robustness_views:
        rob_cams = rob_cams + cams[: req.robustness_views - len(rob_cams)]
    report = robustness_protocol(style_grid, rob_cams, restylize, spec, path_cameras=cams)

    views = [render_view(style_grid, c, spec) for c in cams]
    ref_cam, ref_style, _ = refs[0]
    similarity = ref_similarity(
        views,
        ref_style,
        mid_descriptor(),
        k=req.similarity_k,
        view_cameras=cams,
        reference_camera=ref_cam,
    )
    report.config = cfg.model_dump()

    out = Path(req.out_report)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["similarity"] = similarity
    out.write_text(json.dumps(payload, indent=1))
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "psnr_db"])
        for cam, val in zip(rob_cams, report.per_view_psnr):
            w.writerow([cam.view_id or "?", val])
    return models.EvalResponse(
        mean_psnr=report.mean_psnr,
        per_view_psnr=report.per_view_psnr,
        similarity=similarity,
        out_report=str(out),
        config=cfg,
    )
