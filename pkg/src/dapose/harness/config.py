"""Experiment configuration schema.

Configs are JSON.  Every section is optional except ``seed``; omitted
fields take the defaults below and :func:`save_config` writes the fully
expanded, key-sorted form, so ``save(load(c))`` is a fixed point.
"""

from __future__ import annotations

import json
import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CameraConfig(_Strict):
    view_id: int
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    R: list[float] = Field(min_length=9, max_length=9)
    t: list[float] = Field(min_length=3, max_length=3)
    width: int = Field(gt=0)
    height: int = Field(gt=0)


class RigConfig(_Strict):
    preset: Literal["circular", "explicit"] = "circular"
    views: int = Field(4, ge=1)
    radius_mm: float = Field(4000.0, gt=0)
    height_mm: float = 1500.0
    target_mm: list[float] = Field(default_factory=lambda: [0.0, 0.0, 900.0], min_length=3, max_length=3)
    focal_px: float = Field(1150.0, gt=0)
    image_size: list[int] = Field(default_factory=lambda: [1000, 1000], min_length=2, max_length=2)
    cameras: Optional[list[CameraConfig]] = None

    @model_validator(mode="after")
    def _explicit_needs_cameras(self):
        if self.preset == "explicit" and not self.cameras:
            raise ValueError("preset 'explicit' requires a non-empty 'cameras' list")
        return self


class SkeletonConfig(_Strict):
    joints: int = Field(17, ge=1)


class MotionConfig(_Strict):
    actions: list[Literal["idle", "sit", "walk", "wave"]] = Field(
        default_factory=lambda: ["idle", "sit", "walk", "wave"], min_length=1
    )
    frames: int = Field(50, ge=1)
    frame_rate: float = Field(50.0, gt=0)


class ObservationConfig(_Strict):
    pixel_noise_sigma: float = Field(1.0, ge=0)


class SeverityConfig(_Strict):
    gaussian: float = Field(20.0, ge=0)
    salt_pepper: float = Field(20.0, ge=0)
    speckle: float = Field(20.0, ge=0)
    missing: float = Field(0.8, ge=0, le=1)
    occlusion: float = Field(0.3, ge=0, le=0.7)


class ImageConfig(_Strict):
    enabled: bool = False
    frames_per_sequence: int = Field(2, ge=0)
    raster_size: list[int] = Field(default_factory=lambda: [224, 224], min_length=2, max_length=2)
    gaussian_sigma: float = Field(25.0, ge=0)
    salt_pepper_p: float = Field(0.05, ge=0, le=1)
    speckle_sigma: float = Field(0.2, ge=0)
    block_count: int = Field(8, ge=0)
    block_size: list[int] = Field(default_factory=lambda: [10, 30], min_length=2, max_length=2)
    occlusion_degree: float = Field(0.3, ge=0, le=0.7)
    occluder_count: int = Field(12, ge=1)
    occluder_size: list[int] = Field(default_factory=lambda: [10, 50], min_length=2, max_length=2)
    occluder_masks: list[str] = Field(default_factory=list)


class CorruptionConfig(_Strict):
    mode: Literal["none", "noise", "missing", "occlusion", "mixed"] = "noise"
    mixed_modes: list[Literal["noise", "missing", "occlusion"]] = Field(
        default_factory=lambda: ["noise", "missing"], min_length=1
    )
    severity: SeverityConfig = Field(default_factory=SeverityConfig)
    images: ImageConfig = Field(default_factory=ImageConfig)


class FusionConfig(_Strict):
    modes: list[Literal["adaptive", "uniform", "none", "raw"]] = Field(
        default_factory=lambda: ["adaptive", "uniform", "none"], min_length=1
    )
    mode: Literal["inference", "training"] = "inference"
    estimator: Literal["pairs", "lift"] = "pairs"
    reduction: Literal["mean_abs", "mean_l2"] = "mean_abs"
    epsilon: float = Field(1e-6, gt=0)
    reference_view: int = Field(0, ge=0)


class MetricsConfig(_Strict):
    p_mpjpe_scale: bool = False


class OutputConfig(_Strict):
    dir: str = "out"
    plots: bool = True
    dataset: bool = False
    severity_sweep: list[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 20.0, 40.0])


class ExperimentConfig(_Strict):
    seed: int = Field(ge=0)
    rig: RigConfig = Field(default_factory=RigConfig)
    skeleton: SkeletonConfig = Field(default_factory=SkeletonConfig)
    motion: MotionConfig = Field(default_factory=MotionConfig)
    observation: ObservationConfig = Field(default_factory=ObservationConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    threads: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _views(self):
        views = len(self.rig.cameras) if self.rig.preset == "explicit" else self.rig.views
        if self.fusion.reference_view >= views:
            raise ValueError(f"fusion.reference_view {self.fusion.reference_view} out of range for {views} views")
        return self

    @property
    def view_count(self) -> int:
        return len(self.rig.cameras) if self.rig.preset == "explicit" else self.rig.views


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def save_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(cfg))
