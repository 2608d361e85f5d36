"""
On-disk formats: annotation JSON, region masks (JSON grid and PGM image), heatmap PGM, the MVDF
frame container, the MVDT tensor container for weights and feature maps, and per-frame detections.

Binary containers are little-endian throughout.
"""
from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Sequence, get_args

import numpy as np
import torch

from vidmask.constant import FRAME_MAGIC, FRAME_VERSION, TENSOR_MAGIC, TENSOR_VERSION
from vidmask.custom_exception import FormatError
from vidmask.detector import Detection
from vidmask.mask_builder import BBox, GridSpec, Heatmap, RegionMask
from vidmask.toy_vit import MaskedViT, ModelConfig

logger = logging.getLogger(__name__)

MaskFileType = Literal["json", "pgm"]
maskFileTypes = list(get_args(MaskFileType))

U32 = np.dtype("<u4")
I64 = np.dtype("<i8")
F32 = np.dtype("<f4")


def load_json(path: str) -> Any:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(path, f"line {e.lineno} column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise FormatError(path, e.strerror or str(e)) from e


def _dump_json(data: Any, path: str) -> str:
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


@dataclass
class FrameAnnotation:
    index: int
    boxes: list[BBox]
    classes: Optional[list[int]] = None

    def to_dict(self) -> dict:
        data = {"index": self.index, "boxes": [b.as_list() for b in self.boxes]}
        if self.classes is not None:
            data["classes"] = list(self.classes)
        return data


@dataclass
class AnnotationSet:
    """Ground truth of one or more sequences over a common frame size."""

    frame_size: tuple[int, int]
    frames: list[FrameAnnotation] = field(default_factory=list)

    def pairs(self) -> list[tuple[int, list[BBox]]]:
        return [(f.index, f.boxes) for f in self.frames]

    def boxes(self) -> list[list[BBox]]:
        return [f.boxes for f in self.frames]

    def classes(self) -> list[Optional[list[int]]]:
        return [f.classes for f in self.frames]

    def to_dict(self) -> dict:
        return {"frame_size": list(self.frame_size), "frames": [f.to_dict() for f in self.frames]}

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def read_annotations(path: str) -> AnnotationSet:
    data = load_json(path)
    try:
        height, width = (int(v) for v in data["frame_size"])
        frames = []
        for i, frame in enumerate(data["frames"]):
            boxes = []
            for box in frame["boxes"]:
                if len(box) != 4:
                    raise FormatError(path, f"frame entry {i}: box {box} does not have 4 coordinates")
                boxes.append(BBox.from_list(box))
            classes = frame.get("classes")
            if classes is not None:
                classes = [int(c) for c in classes]
                if len(classes) != len(boxes):
                    raise FormatError(path, f"frame entry {i}: {len(classes)} classes for {len(boxes)} boxes")
            frames.append(FrameAnnotation(int(frame["index"]), boxes, classes))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, f"not an annotation document ({type(e).__name__}: {e})") from e
    return AnnotationSet((height, width), frames)


def write_annotations(annotations: AnnotationSet, path: str) -> str:
    return _dump_json(annotations.to_dict(), path)


class MaskExporter(ABC):
    """
    Base class for region mask exporters.
    """
    @abstractmethod
    def export(self, mask: RegionMask, output_path: str):
        pass


class JsonMaskExporter(MaskExporter):
    def export(self, mask: RegionMask, output_path: str):
        _dump_json(
            {
                "frame_size": list(mask.spec.frame_size),
                "region_size": mask.spec.region_size,
                "keep_count": mask.keep_count,
                "grid": mask.grid.tolist(),
            },
            output_path,
        )


class PgmMaskExporter(MaskExporter):
    """One pixel per region, 255 for kept regions."""
    def export(self, mask: RegionMask, output_path: str):
        write_pgm(mask.grid.astype(np.uint8) * 255, output_path)


class MaskWriter:
    """
    Resolves which MaskExporter to use for a file type and runs it.
    """
    exporters: Dict[MaskFileType, MaskExporter]

    def __init__(self) -> None:
        self.exporters = {
            "json": JsonMaskExporter(),
            "pgm": PgmMaskExporter(),
        }

    def write(self, mask: RegionMask, output_path: str, output_type: MaskFileType) -> str:
        if output_type not in self.exporters:
            raise FormatError(output_path, f"mask type {output_type} is not supported, select one of {maskFileTypes}")
        self.exporters[output_type].export(mask, output_path)
        return output_path


def read_mask(path: str) -> RegionMask:
    data = load_json(path)
    try:
        spec = GridSpec(tuple(data["frame_size"]), int(data["region_size"]))
        return RegionMask(np.asarray(data["grid"], dtype=bool), spec)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, f"not a mask document ({type(e).__name__}: {e})") from e


def write_pgm(image: np.ndarray, path: str) -> str:
    """Binary greyscale PGM (P5, maxval 255)."""
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())
    return path


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(path, "not a binary PGM file")
    # Pixel bytes may themselves be whitespace, so only the header tokens are split off.
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3].split(maxsplit=1)[0])
    if maxval != 255:
        raise FormatError(path, f"unsupported maxval {maxval}")
    pixels = np.frombuffer(data[len(data) - width * height:], dtype=np.uint8)
    return pixels.reshape(height, width)


def write_heatmap_pgm(h: Heatmap, path: str) -> str:
    """Counts scaled linearly so the largest count maps to 255."""
    peak = int(h.values.max()) if h.values.size else 0
    if peak == 0:
        return write_pgm(np.zeros(h.frame_size, dtype=np.uint8), path)
    return write_pgm((h.values.astype(np.float64) * 255.0 / peak).round().astype(np.uint8), path)


def write_frames(frames: np.ndarray, path: str) -> str:
    """MVDF container: magic, u32 version, u32 W, u32 H, u32 count, then count x H x W x 3 RGB bytes."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4 or frames.shape[3] != 3:
        raise FormatError(path, f"frames must be a uint8 (T, H, W, 3) array, got {frames.dtype} {frames.shape}")
    count, height, width, _ = frames.shape
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(np.array([FRAME_VERSION, width, height, count], dtype=U32).tobytes())
        f.write(np.ascontiguousarray(frames).tobytes())
    return path


def read_frames(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(path, e.strerror or str(e)) from e
    if len(data) < 20 or data[:4] != FRAME_MAGIC:
        raise FormatError(path, "not an MVDF frame container")
    version, width, height, count = (int(v) for v in np.frombuffer(data, dtype=U32, count=4, offset=4))
    if version != FRAME_VERSION:
        raise FormatError(path, f"unsupported MVDF version {version}")
    expected = count * height * width * 3
    if len(data) - 20 != expected:
        raise FormatError(path, f"expected {expected} frame bytes, found {len(data) - 20}")
    return np.frombuffer(data, dtype=np.uint8, offset=20).reshape(count, height, width, 3).copy()


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, dtype: np.dtype, count: int = 1) -> np.ndarray:
        size = dtype.itemsize * count
        if self.offset + size > len(self.data):
            raise FormatError(self.path, f"truncated at byte {self.offset}")
        values = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return values

    def name(self) -> str:
        length = int(self.take(U32)[0])
        if self.offset + length > len(self.data):
            raise FormatError(self.path, f"truncated at byte {self.offset}")
        text = self.data[self.offset:self.offset + length].decode("utf-8")
        self.offset += length
        return text


def _name_bytes(name: str) -> bytes:
    encoded = name.encode("utf-8")
    return np.array([len(encoded)], dtype=U32).tobytes() + encoded


def write_tensors(fields: Dict[str, int], tensors: Dict[str, torch.Tensor], path: str) -> str:
    """
    MVDT container: magic, u32 version, u32 field count, (name, i64 value) per field, u32 tensor
    count, then per tensor its name, u32 ndim, u32 dims and row-major float32 values.
    Names are a u32 byte length followed by UTF-8 bytes.
    """
    chunks = [TENSOR_MAGIC, np.array([TENSOR_VERSION, len(fields)], dtype=U32).tobytes()]
    for name, value in fields.items():
        chunks.append(_name_bytes(name))
        chunks.append(np.array([int(value)], dtype=I64).tobytes())
    chunks.append(np.array([len(tensors)], dtype=U32).tobytes())
    for name, tensor in tensors.items():
        array = tensor.detach().cpu().numpy().astype(F32)
        chunks.append(_name_bytes(name))
        chunks.append(np.array([array.ndim, *array.shape], dtype=U32).tobytes())
        chunks.append(np.ascontiguousarray(array).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    return path


def read_tensors(path: str) -> tuple[Dict[str, int], Dict[str, torch.Tensor]]:
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    if reader.data[:4] != TENSOR_MAGIC:
        raise FormatError(path, "not an MVDT tensor container")
    reader.offset = 4
    version, num_fields = (int(v) for v in reader.take(U32, 2))
    if version != TENSOR_VERSION:
        raise FormatError(path, f"unsupported MVDT version {version}")
    fields = {}
    for _ in range(num_fields):
        name = reader.name()
        fields[name] = int(reader.take(I64)[0])
    tensors = {}
    for _ in range(int(reader.take(U32)[0])):
        name = reader.name()
        ndim = int(reader.take(U32)[0])
        shape = tuple(int(d) for d in reader.take(U32, ndim))
        values = reader.take(F32, int(np.prod(shape, dtype=np.int64)))
        tensors[name] = torch.from_numpy(values.reshape(shape).copy())
    if reader.offset != len(reader.data):
        raise FormatError(path, f"{len(reader.data) - reader.offset} trailing bytes")
    return fields, tensors


def config_fields(config: ModelConfig) -> Dict[str, int]:
    if config.num_blocks > 62:
        raise FormatError("<config>", f"cannot encode {config.num_blocks} blocks in the global block bitmask")
    return {
        "embed_dim": config.embed_dim,
        "num_heads": config.num_heads,
        "num_blocks": config.num_blocks,
        "global_blocks": sum(1 << i for i in config.global_block_indices),
        "window_side": config.window_side,
        "ffn_hidden": config.ffn_hidden,
        "frame_height": config.grid.frame_size[0],
        "frame_width": config.grid.frame_size[1],
        "region_size": config.grid.region_size,
        "seed": config.seed,
    }


def config_from_fields(fields: Dict[str, int], path: str) -> ModelConfig:
    try:
        return ModelConfig(
            embed_dim=fields["embed_dim"],
            num_heads=fields["num_heads"],
            num_blocks=fields["num_blocks"],
            global_block_indices=frozenset(
                i for i in range(1, fields["num_blocks"] + 1) if fields["global_blocks"] >> i & 1
            ),
            window_side=fields["window_side"],
            ffn_hidden=fields["ffn_hidden"],
            grid=GridSpec((fields["frame_height"], fields["frame_width"]), fields["region_size"]),
            seed=fields["seed"],
        )
    except KeyError as e:
        raise FormatError(path, f"missing config field {e}") from e


def save_weights(model: MaskedViT, path: str) -> str:
    tensors = {name: param for name, param in model.named_parameters()}
    return write_tensors(config_fields(model.config), tensors, path)


def save_features(features: Dict[str, torch.Tensor], path: str, config: Optional[ModelConfig] = None) -> str:
    """Feature maps in the weight container, so masked and dense outputs can be diffed offline."""
    return write_tensors(config_fields(config) if config is not None else {}, features, path)


def load_weights(path: str) -> MaskedViT:
    fields, tensors = read_tensors(path)
    model = MaskedViT(config_from_fields(fields, path))
    params = dict(model.named_parameters())
    if set(params) != set(tensors):
        raise FormatError(path, f"tensor names do not match the model: {sorted(set(params) ^ set(tensors))}")
    with torch.no_grad():
        for name, param in params.items():
            if tuple(param.shape) != tuple(tensors[name].shape):
                raise FormatError(path, f"{name}: shape {tuple(tensors[name].shape)}, expected {tuple(param.shape)}")
            param.copy_(tensors[name].to(param.dtype))
    model.eval()
    return model


def write_detections(per_frame: Sequence[Sequence[Detection]], path: str, indices: Optional[Sequence[int]] = None) -> str:
    indices = range(len(per_frame)) if indices is None else indices
    return _dump_json(
        [{"index": int(i), "detections": [d.to_dict() for d in dets]} for i, dets in zip(indices, per_frame)],
        path,
    )


def read_detections(path: str) -> list[list[Detection]]:
    data = load_json(path)
    try:
        entries = sorted(data, key=lambda e: int(e["index"]))
        return [[Detection.from_dict(d) for d in entry["detections"]] for entry in entries]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, f"not a detections document ({type(e).__name__}: {e})") from e
