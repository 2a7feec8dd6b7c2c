"""Structured run configuration: one document covering sampling, fitting,
registration, stylization, and loss weights. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .errors import FormatError, InputError
from .fit import FitConfig
from .grid import VoxelGrid
from .registration import DictConfig
from .render import SampleSpec
from .stylize import LossWeights, StyleConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SampleSection(StrictModel):
    step_factor: float = 0.5  # fraction of the smallest voxel edge
    step_size: Optional[float] = None  # absolute override, world units
    max_samples: int = 512
    sigma_z: float = 0.8


class GridSection(StrictModel):
    resolution: int = 32
    bbox_min: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bbox_max: tuple[float, float, float] = (1.0, 1.0, 1.0)
    init_density: float = 0.5
    init_color: float = 0.5


class FitSection(StrictModel):
    epochs: int = 12
    batch_rays: int = 8192
    learning_rate: float = 0.1
    optimize_density: bool = True


class DictSection(StrictModel):
    resolution: int = 256
    capacity: int = 8
    cos_threshold: float = 0.6


class StyleSection(StrictModel):
    epochs: int = 10
    frozen_content_epoch: int = 7
    frozen_lambda_f: float = 0.2
    pseudo_ray_batch: int = 4096
    ref_fraction: float = 0.5
    learning_rate: float = 0.01
    freeze_density: bool = True
    half_res: bool = False
    mask_erosion_radius: int = 2
    color_gate: float = 0.4


class WeightsSection(StrictModel):
    lambda_r: float = 1.0
    lambda_f: float = 1.0
    lambda_c: float = 5.0
    lambda_prime: float = 5.0e-3


class RunConfig(StrictModel):
    sample: SampleSection = Field(default_factory=SampleSection)
    grid: GridSection = Field(default_factory=GridSection)
    fit: FitSection = Field(default_factory=FitSection)
    dictionary: DictSection = Field(default_factory=DictSection)
    style: StyleSection = Field(default_factory=StyleSection)
    weights: WeightsSection = Field(default_factory=WeightsSection)
    extractor: str = "builtin"  # "builtin" or a directory of exported maps
    seed: int = 0
    threads: int = 0

    def sample_spec(self, grid: VoxelGrid) -> SampleSpec:
        import numpy as np

        step = self.sample.step_size
        if step is None:
            step = self.sample.step_factor * float(np.min(grid.voxel_size))
        return SampleSpec(step_size=step, max_samples=self.sample.max_samples, sigma_z=self.sample.sigma_z)

    def fit_config(self) -> FitConfig:
        return FitConfig(
            epochs=self.fit.epochs,
            batch_rays=self.fit.batch_rays,
            learning_rate=self.fit.learning_rate,
            optimize_density=self.fit.optimize_density,
            seed=self.seed,
        )

    def dict_config(self) -> DictConfig:
        return DictConfig(
            resolution=self.dictionary.resolution,
            capacity=self.dictionary.capacity,
            cos_threshold=self.dictionary.cos_threshold,
        )

    def style_config(self) -> StyleConfig:
        s = self.style
        return StyleConfig(
            epochs=s.epochs,
            frozen_content_epoch=s.frozen_content_epoch,
            frozen_lambda_f=s.frozen_lambda_f,
            pseudo_ray_batch=s.pseudo_ray_batch,
            ref_fraction=s.ref_fraction,
            learning_rate=s.learning_rate,
            freeze_density=s.freeze_density,
            half_res=s.half_res,
            mask_erosion_radius=s.mask_erosion_radius,
            color_gate=s.color_gate,
            seed=self.seed,
        )

    def loss_weights(self) -> LossWeights:
        w = self.weights
        return LossWeights(
            lambda_r=w.lambda_r,
            lambda_f=w.lambda_f,
            lambda_c=w.lambda_c,
            lambda_prime=w.lambda_prime,
        )

    def init_grid(self) -> VoxelGrid:
        g = self.grid
        out = VoxelGrid.empty(
            (g.resolution, g.resolution, g.resolution),
            g.bbox_min,
            g.bbox_max,
            color=g.init_color,
        )
        out.density[:] = g.init_density
        return out


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix in (".yaml", ".yml"):
            payload = yaml.safe_load(text) or {}
        else:
            payload = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        return RunConfig.model_validate(payload)
    except Exception as exc:
        raise InputError(f"{path}: {exc}") from exc
