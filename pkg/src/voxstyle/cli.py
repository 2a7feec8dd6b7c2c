"""Thin-client command line: every subcommand marshals its arguments into
the service request models and either POSTs them to a running server
(--server) or executes the shared handlers in-process.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .errors import VoxstyleError

EXIT_CODES = {"input_error": 2, "format_error": 3}


def _apply_threads(threads: int) -> None:
    if threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))


def _load_config(config_path, seed, threads):
    from .config import RunConfig, load_run_config

    cfg = load_run_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
        _apply_threads(threads)
    return cfg


def _dispatch(ctx, endpoint: str, handler_name: str, request) -> dict:
    """POST to --server when given, else run the handler in this process."""
    server = ctx.obj.get("server")
    if server:
        import httpx

        resp = httpx.post(
            server.rstrip("/") + endpoint, json=request.model_dump(), timeout=None
        )
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise VoxstyleError(f"server returned {resp.status_code}: {detail}")
        return resp.json()
    from .service import handlers

    return getattr(handlers, handler_name)(request).model_dump()


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=1, default=str))


def _fail(exc: Exception) -> None:
    if isinstance(exc, VoxstyleError):
        category = exc.category
    else:
        category = "run_error"
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    sys.exit(EXIT_CODES.get(category, 1))


def _ref_options(f):
    f = click.option(
        "--ref",
        "refs",
        nargs=3,
        multiple=True,
        required=True,
        metavar="TRANSFORMS VIEW_ID STYLE_IMAGE",
        help="Reference view: transforms.json path, view id, stylized image. Repeatable.",
    )(f)
    f = click.option(
        "--ref-mask",
        "ref_masks",
        multiple=True,
        metavar="MASK",
        help="Foreground mask for the nth --ref (positional, optional).",
    )(f)
    return f


def _build_refs(refs, ref_masks):
    from .service.models import RefSpec

    out = []
    for i, (transforms, view_id, style_image) in enumerate(refs):
        mask = ref_masks[i] if i < len(ref_masks) else None
        out.append(
            RefSpec(transforms=transforms, view_id=view_id, style_image=style_image, mask=mask)
        )
    return out


@click.group()
@click.option("--server", help="Base URL of a running voxstyle service.")
@click.option("--config", "config_path", type=click.Path(), help="Run configuration (JSON or YAML).")
@click.option("--seed", type=int, default=None, help="Override the RNG seed.")
@click.option("--threads", type=int, default=None, help="Hint for numeric thread pools.")
@click.pass_context
def main(ctx, server, config_path, seed, threads):
    """Reference-guided voxel radiance field stylization."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["config_path"] = config_path
    ctx.obj["seed"] = seed
    ctx.obj["threads"] = threads


def _cfg(ctx):
    return _load_config(ctx.obj.get("config_path"), ctx.obj.get("seed"), ctx.obj.get("threads"))


@main.command("gen-toy")
@click.argument("out_dir", type=click.Path())
@click.option("--resolution", default=32, show_default=True)
@click.option("--n-train", default=20, show_default=True)
@click.option("--n-test", default=5, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.pass_context
def gen_toy(ctx, out_dir, resolution, n_train, n_test, width, height):
    """Generate the procedural ground-truth scene with posed renders."""
    from .service.models import GenToyRequest

    try:
        req = GenToyRequest(
            out_dir=out_dir,
            resolution=resolution,
            n_train=n_train,
            n_test=n_test,
            width=width,
            height=height,
        )
        _emit(_dispatch(ctx, "/gen-toy", "gen_toy", req))
    except Exception as exc:
        _fail(exc)


@main.command()
@click.argument("dataset_dir", type=click.Path())
@click.argument("out_grid", type=click.Path())
@click.pass_context
def fit(ctx, dataset_dir, out_grid):
    """Fit the photoreal field to a posed dataset."""
    from .service.models import FitRequest

    try:
        req = FitRequest(dataset_dir=dataset_dir, out_grid=out_grid, config=_cfg(ctx))
        _emit(_dispatch(ctx, "/fit", "fit", req))
    except Exception as exc:
        _fail(exc)


@main.command()
@click.argument("grid", type=click.Path())
@click.argument("transforms", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--depth", is_flag=True, help="Also write RNFM depth maps.")
@click.pass_context
def render(ctx, grid, transforms, out_dir, depth):
    """Render a grid from the camera poses of a transforms file."""
    from .service.models import RenderRequest

    try:
        req = RenderRequest(
            grid=grid, transforms=transforms, out_dir=out_dir, depth=depth, config=_cfg(ctx)
        )
        _emit(_dispatch(ctx, "/render", "render", req))
    except Exception as exc:
        _fail(exc)


@main.command()
@click.argument("grid", type=click.Path())
@click.argument("cameras_transforms", type=click.Path())
@_ref_options
@click.option("--out-debug", type=click.Path(), help="Write per-match debug CSV here.")
@click.pass_context
def register(ctx, grid, cameras_transforms, refs, ref_masks, out_debug):
    """Build the reference dictionary and report pseudo-ray coverage."""
    from .service.models import RegisterRequest

    try:
        req = RegisterRequest(
            grid=grid,
            refs=_build_refs(refs, ref_masks),
            cameras_transforms=cameras_transforms,
            out_debug_csv=out_debug,
            config=_cfg(ctx),
        )
        _emit(_dispatch(ctx, "/register", "register", req))
    except Exception as exc:
        _fail(exc)


@main.command()
@click.argument("grid", type=click.Path())
@click.argument("cameras_transforms", type=click.Path())
@click.argument("out_grid", type=click.Path())
@_ref_options
@click.option("--out-log", type=click.Path(), help="Write the JSON training log here.")
@click.pass_context
def stylize(ctx, grid, cameras_transforms, out_grid, refs, ref_masks, out_log):
    """Run the full stylization pipeline."""
    from .service.models import StylizeRequest

    try:
        req = StylizeRequest(
            grid=grid,
            refs=_build_refs(refs, ref_masks),
            cameras_transforms=cameras_transforms,
            out_grid=out_grid,
            out_log=out_log,
            config=_cfg(ctx),
        )
        _emit(_dispatch(ctx, "/stylize", "stylize_run", req))
    except Exception as exc:
        _fail(exc)


@main.command("eval")
@click.argument("style_grid", type=click.Path())
@click.argument("photo_grid", type=click.Path())
@click.argument("cameras_transforms", type=click.Path())
@click.argument("out_report", type=click.Path())
@_ref_options
@click.option("--robustness-views", default=3, show_default=True)
@click.option("--similarity-k", default=10, show_default=True)
@click.pass_context
def evaluate(ctx, style_grid, photo_grid, cameras_transforms, out_report, refs, ref_masks, robustness_views, similarity_k):
    """Robustness protocol plus reference-similarity scoring."""
    from .service.models import EvalRequest

    try:
        req = EvalRequest(
            style_grid=style_grid,
            photo_grid=photo_grid,
            refs=_build_refs(refs, ref_masks),
            cameras_transforms=cameras_transforms,
            out_report=out_report,
            robustness_views=robustness_views,
            similarity_k=similarity_k,
            config=_cfg(ctx),
        )
        _emit(_dispatch(ctx, "/eval", "evaluate", req))
    except Exception as exc:
        _fail(exc)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("voxstyle.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
