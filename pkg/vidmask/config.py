"""
Run configuration shared by every CLI command.

Values are resolved from, in increasing priority: built-in defaults (reference or toy geometry),
VIDMASK_* environment variables, a JSON config file, and explicit command-line flags.
"""
from __future__ import annotations

import itertools
import logging
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Extra, ValidationError, root_validator, validator

from vidmask.constant import (
    DEFAULT_CONNECTIVITY,
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_OBJECTNESS_THRESHOLD,
    REGION_SIZE,
    TOY_EMBED_DIM,
    TOY_FFN_HIDDEN,
    TOY_FRAME_SIZE,
    TOY_GLOBAL_EVERY,
    TOY_NUM_BLOCKS,
    TOY_NUM_HEADS,
    TOY_WINDOW_SIDE,
    VIT_B_EMBED_DIM,
    VIT_B_FFN_HIDDEN,
    VIT_B_FRAME_SIZE,
    VIT_B_GLOBAL_EVERY,
    VIT_B_NUM_BLOCKS,
    VIT_B_NUM_HEADS,
    VIT_B_WINDOW_SIDE,
)
from vidmask.custom_exception import ConfigError, VidMaskError
from vidmask.formats import load_json
from vidmask.mask_builder import GridSpec, MaskSchedule
from vidmask.toy_vit import ModelConfig, every_nth_block
from vidmask.utils import DEFAULT_OUTPUT_PATH

logger = logging.getLogger(__name__)

Backbone = Literal["windowed", "global"]

TOY_DEFAULTS = {
    "frame_size": TOY_FRAME_SIZE,
    "embed_dim": TOY_EMBED_DIM,
    "num_heads": TOY_NUM_HEADS,
    "num_blocks": TOY_NUM_BLOCKS,
    "window_side": TOY_WINDOW_SIDE,
    "ffn_hidden": TOY_FFN_HIDDEN,
    "global_every": TOY_GLOBAL_EVERY,
}


def _split(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    if isinstance(value, (int, float)):
        return [value]
    return value


class RunConfig(BaseModel):
    backbone: Backbone = "windowed"
    period: List[int] = [8]
    static_keep: List[float] = [0.3]
    region_size: int = REGION_SIZE
    dilation: int = 0
    frame_size: Tuple[int, int] = VIT_B_FRAME_SIZE
    embed_dim: int = VIT_B_EMBED_DIM
    num_heads: int = VIT_B_NUM_HEADS
    num_blocks: int = VIT_B_NUM_BLOCKS
    window_side: int = VIT_B_WINDOW_SIDE
    ffn_hidden: int = VIT_B_FFN_HIDDEN
    global_every: int = VIT_B_GLOBAL_EVERY
    seed_scene: int = 0
    seed_model: int = 0
    toy: bool = False
    oracle: bool = False
    input: Optional[str] = None
    out: str = DEFAULT_OUTPUT_PATH
    num_sequences: int = 1
    num_frames: int = 16
    train_sequences: int = 8
    num_objects: Tuple[int, int] = (1, 2)
    object_size: Tuple[int, int] = (48, 64)
    max_speed: int = 2
    camera_velocity: Tuple[int, int] = (0, 0)
    num_classes: int = 1
    threshold: float = DEFAULT_OBJECTNESS_THRESHOLD
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    connectivity: int = DEFAULT_CONNECTIVITY
    threads: int = 1

    class Config:
        extra = Extra.forbid

    @validator("period", "static_keep", "frame_size", "num_objects", "object_size", "camera_velocity", pre=True)
    def split_lists(cls, value):
        return _split(value)

    @validator("period", each_item=True)
    def check_period(cls, value):
        if value < 1:
            raise ValueError(f"period must be >= 1, got {value}")
        return value

    @validator("static_keep", each_item=True)
    def check_static_keep(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"static keep rate must be in [0, 1], got {value}")
        return value

    @validator("period", "static_keep")
    def check_not_empty(cls, value):
        if not value:
            raise ValueError("at least one value is required")
        return value

    @validator("dilation", "seed_scene", "seed_model")
    def check_non_negative(cls, value):
        if value < 0:
            raise ValueError(f"must be >= 0, got {value}")
        return value

    @validator("num_frames")
    def check_num_frames(cls, value):
        if value < 1:
            raise ValueError("num_frames must be ≥ 1")
        return value

    @validator(
        "num_sequences", "threads", "global_every", "max_speed", "num_classes", "region_size",
        "embed_dim", "num_heads", "num_blocks", "window_side", "ffn_hidden",
    )
    def check_positive(cls, value, field):
        if value < 1 and not (field.name == "max_speed" and value == 0):
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @validator("train_sequences")
    def check_train_sequences(cls, value):
        if value < 0:
            raise ValueError(f"must be >= 0, got {value}")
        return value

    @validator("threshold", "iou_threshold")
    def check_unit_interval(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"must be in [0, 1], got {value}")
        return value

    @validator("connectivity")
    def check_connectivity(cls, value):
        if value not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def check_model(cls, values):
        try:
            model_config(values)
        except VidMaskError as e:
            raise ValueError(e.message)
        return values

    def to_model_config(self) -> ModelConfig:
        return model_config(self.dict())

    @property
    def grid(self) -> GridSpec:
        return GridSpec.padded(self.frame_size, self.region_size)

    def schedules(self) -> List[MaskSchedule]:
        """Every (period, static keep rate) combination in flag order."""
        return [
            MaskSchedule(period, static_keep, self.dilation)
            for period, static_keep in itertools.product(self.period, self.static_keep)
        ]

    def header(self) -> Dict[str, Any]:
        """Report header: the two seeds and the model geometry."""
        return {
            "seed_scene": self.seed_scene,
            "seed_model": self.seed_model,
            "backbone": self.backbone,
            "frame_size": list(self.frame_size),
            "region_size": self.region_size,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "num_blocks": self.num_blocks,
            "window_side": self.window_side,
            "ffn_hidden": self.ffn_hidden,
            "dilation": self.dilation,
        }

    @classmethod
    def resolve(
        cls,
        flags: Optional[Dict[str, Any]] = None,
        config_file: Optional[str] = None,
        env: Optional[Dict[str, Any]] = None,
    ) -> RunConfig:
        """Merge the layers and validate. Unset layers are skipped; pydantic errors become ConfigError."""
        layers = [dict(env or {})]
        if config_file:
            data = load_json(config_file)
            if not isinstance(data, dict):
                raise ConfigError(f"{config_file}: config file must hold a JSON object")
            layers.append(data)
        layers.append({k: v for k, v in (flags or {}).items() if v is not None})

        merged: Dict[str, Any] = {}
        for layer in layers:
            merged.update(layer)
        toy = merged.get("toy", False)
        if isinstance(toy, str):
            toy = toy.strip().lower() in ("1", "true", "yes", "on")
        values = dict(TOY_DEFAULTS) if toy else {}
        values.update(merged)
        try:
            config = cls(**values)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise ConfigError(f"invalid {location}: {first['msg']}") from e
        logger.debug(f"Resolved run configuration: {config.dict()}")
        return config


def model_config(values: Dict[str, Any]) -> ModelConfig:
    windowed = values["backbone"] == "windowed"
    num_blocks = values["num_blocks"]
    return ModelConfig(
        embed_dim=values["embed_dim"],
        num_heads=values["num_heads"],
        num_blocks=num_blocks,
        global_block_indices=(
            every_nth_block(num_blocks, values["global_every"]) if windowed else frozenset(range(1, num_blocks + 1))
        ),
        window_side=values["window_side"],
        ffn_hidden=values["ffn_hidden"],
        grid=GridSpec.padded(tuple(values["frame_size"]), values["region_size"]),
        seed=values["seed_model"],
    )
