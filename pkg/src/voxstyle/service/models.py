"""Request/response schemas for the HTTP service. All file references are
server-local paths; the CLI builds the same models and runs them in-process
when no server is configured.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import RunConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RefSpec(StrictModel):
    """One stylized reference view: a camera picked out of a transforms file
    plus the stylized image (and optional foreground mask) for it."""

    transforms: str
    view_id: str
    style_image: str
    mask: Optional[str] = None


class GenToyRequest(StrictModel):
    out_dir: str
    resolution: int = 32
    n_train: int = 20
    n_test: int = 5
    width: int = 64
    height: int = 64


class GenToyResponse(StrictModel):
    grid: str
    train_dir: str
    test_dir: str
    n_train: int
    n_test: int
    resolution: int


class FitRequest(StrictModel):
    dataset_dir: str
    out_grid: str
    config: RunConfig = Field(default_factory=RunConfig)


class FitResponse(StrictModel):
    out_grid: str
    epoch_losses: list[float]
    config: RunConfig


class RenderRequest(StrictModel):
    grid: str
    transforms: str
    out_dir: str
    depth: bool = False
    config: RunConfig = Field(default_factory=RunConfig)


class RenderResponse(StrictModel):
    images: list[str]
    depths: list[str]
    config: RunConfig


class RegisterRequest(StrictModel):
    grid: str
    refs: list[RefSpec]
    cameras_transforms: str
    out_debug_csv: Optional[str] = None
    config: RunConfig = Field(default_factory=RunConfig)


class RegisterResponse(StrictModel):
    dict_entries: int
    dict_rays: int
    n_pseudo: int
    pseudo_per_view: dict[str, int]
    registration_rate_reference: float
    out_debug_csv: Optional[str]
    config: RunConfig


class StylizeRequest(StrictModel):
    grid: str
    refs: list[RefSpec]
    cameras_transforms: str
    out_grid: str
    out_log: Optional[str] = None
    config: RunConfig = Field(default_factory=RunConfig)


class StylizeResponse(StrictModel):
    out_grid: str
    n_pseudo: int
    init_ref_loss: float
    final_ref_loss: float
    log: list[dict]
    config: RunConfig


class EvalRequest(StrictModel):
    style_grid: str
    photo_grid: str
    refs: list[RefSpec]
    cameras_transforms: str
    out_report: str
    robustness_views: int = 3
    similarity_k: int = 10
    config: RunConfig = Field(default_factory=RunConfig)


class EvalResponse(StrictModel):
    mean_psnr: float
    per_view_psnr: list[float]
    similarity: float
    out_report: str
    config: RunConfig


class HealthResponse(StrictModel):
    status: str
    name: str
    version: str
