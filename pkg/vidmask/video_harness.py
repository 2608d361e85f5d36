"""
Synthetic video sequences and the end-to-end masked detection loop.

A sequence's first frame and every `period`-th frame after it run densely. Every other frame runs
masked: the static mask (built once from training annotations) plus the regions under the previous
frame's detections. Runs can be compared frame by frame against a dense oracle that processes every
frame fully.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import ceil
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
from mdc import MDC
from tqdm import tqdm

from vidmask.constant import (
    ANNOTATIONS_FILE,
    CLASS_COLORS,
    CSV_COLUMNS,
    DATASET_NAME,
    DEFAULT_IOU_THRESHOLD,
    FRAMES_FILE,
    MASKING_MODES,
    MIN_OBJECT_GAP,
    ORACLE_COLUMNS,
    PLACEMENT_ATTEMPTS,
    SEQUENCE_DIR_PREFIX,
    TEXTURE_RANGE,
)
from vidmask.cost_model import CostReport, measure_run
from vidmask.custom_exception import ConfigError, DataError, SceneError, SpecMismatchError
from vidmask.detector import (
    Detection,
    DetectionHead,
    EvalResult,
    evaluate,
    head,
    token_targets,
)
from vidmask.formats import (
    AnnotationSet,
    FrameAnnotation,
    read_annotations,
    read_frames,
    write_annotations,
    write_frames,
)
from vidmask.mask_builder import (
    BBox,
    FrameKind,
    MaskSchedule,
    RegionMask,
    build_frame_mask,
    build_static_mask,
    pad_frame,
    schedule_frame,
)
from vidmask.toy_vit import MaskedViT, OpTrace, ReferenceState, forward_dense, forward_masked

logger = logging.getLogger(__name__)

Annotations = Union[AnnotationSet, Iterable[tuple[int, Sequence[BBox]]]]


@dataclass(frozen=True)
class SceneObject:
    box: BBox
    color: tuple[int, int, int]
    velocity: tuple[int, int] = (0, 0)
    class_id: int = 0


@dataclass(frozen=True)
class SyntheticScene:
    """
    Rectangles moving over a textured background.

    `box` of each object is its position at frame 0. Objects bounce off the frame edges. A nonzero
    `camera_velocity` pans the view: the background and every object shift by -camera_velocity
    pixels per frame on top of their own motion.
    """

    frame_size: tuple[int, int]
    objects: tuple[SceneObject, ...]
    texture_seed: int = 0
    num_frames: int = 1
    camera_velocity: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.num_frames < 1:
            raise ConfigError("num_frames must be ≥ 1")
        height, width = self.frame_size
        for i, obj in enumerate(self.objects):
            if obj.box.width > width or obj.box.height > height:
                raise SceneError(
                    f"object {i} of size {obj.box.width}x{obj.box.height} is larger than the {width}x{height} frame"
                )
            if not obj.box.is_valid(self.frame_size):
                raise SceneError(f"object {i} box {obj.box.as_list()} does not start inside the frame")
            if any(int(v) != v for v in obj.velocity):
                raise SceneError(f"object {i} velocity {obj.velocity} is not integer pixels per frame")
        if any(int(v) != v for v in self.camera_velocity):
            raise SceneError(f"camera velocity {self.camera_velocity} is not integer pixels per frame")


@dataclass
class GeneratedSequence:
    frames: np.ndarray
    boxes: list[list[BBox]]
    classes: list[list[int]]

    @property
    def frame_size(self) -> tuple[int, int]:
        return tuple(self.frames.shape[1:3])

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def to_annotations(self, first_index: int = 0) -> AnnotationSet:
        return AnnotationSet(
            self.frame_size,
            [FrameAnnotation(first_index + t, b, c) for t, (b, c) in enumerate(zip(self.boxes, self.classes))],
        )


def _reflect(position: int, limit: int) -> int:
    if limit == 0:
        return 0
    period = 2 * limit
    m = position % period
    return m if m <= limit else period - m


def object_box(obj: SceneObject, t: int, scene: SyntheticScene) -> BBox:
    height, width = scene.frame_size
    vx = obj.velocity[0] - scene.camera_velocity[0]
    vy = obj.velocity[1] - scene.camera_velocity[1]
    x1 = _reflect(obj.box.x1 + vx * t, width - obj.box.width)
    y1 = _reflect(obj.box.y1 + vy * t, height - obj.box.height)
    return BBox(x1, y1, x1 + obj.box.width, y1 + obj.box.height)


def _object_patch(obj: SceneObject) -> np.ndarray:
    yy, xx = np.mgrid[0:obj.box.height, 0:obj.box.width]
    checker = ((yy // 4 + xx // 4) % 2) * 24 - 12
    patch = np.asarray(obj.color, dtype=np.int16)[None, None, :] + checker[..., None]
    return np.clip(patch, 0, 255).astype(np.uint8)


def generate(scene: SyntheticScene, seed: int = 0) -> GeneratedSequence:
    height, width = scene.frame_size
    rng = np.random.default_rng([scene.texture_seed, seed])
    texture = rng.integers(*TEXTURE_RANGE, size=(height, width, 3), dtype=np.uint8)
    patches = [_object_patch(obj) for obj in scene.objects]
    frames = np.empty((scene.num_frames, height, width, 3), dtype=np.uint8)
    boxes, classes = [], []
    for t in range(scene.num_frames):
        shift = (-scene.camera_velocity[1] * t, -scene.camera_velocity[0] * t)
        frame = np.roll(texture, shift=shift, axis=(0, 1))
        frame_boxes = []
        for obj, patch in zip(scene.objects, patches):
            box = object_box(obj, t, scene)
            frame[box.y1:box.y2, box.x1:box.x2] = patch
            frame_boxes.append(box)
        frames[t] = frame
        boxes.append(frame_boxes)
        classes.append([obj.class_id for obj in scene.objects])
    return GeneratedSequence(frames, boxes, classes)


def _too_close(a: BBox, b: BBox, gap: int) -> bool:
    return a.x1 < b.x2 + gap and b.x1 < a.x2 + gap and a.y1 < b.y2 + gap and b.y1 < a.y2 + gap


def random_scene(
    seed: Union[int, np.random.SeedSequence],
    frame_size: tuple[int, int],
    num_frames: int,
    num_objects: tuple[int, int] = (1, 2),
    object_size: tuple[int, int] = (48, 64),
    max_speed: int = 2,
    camera_velocity: tuple[int, int] = (0, 0),
    num_classes: int = len(CLASS_COLORS),
    min_gap: int = MIN_OBJECT_GAP,
) -> SyntheticScene:
    """
    Sample a scene; object counts and sizes are drawn from the inclusive ranges given.

    Objects stay at least `min_gap` pixels apart on every frame, so none is ever occluded and the
    ground-truth box of each is exactly what is drawn. A candidate that cannot be placed clear of
    the others within `PLACEMENT_ATTEMPTS` draws is dropped.
    """
    if not 1 <= num_classes <= len(CLASS_COLORS):
        raise ConfigError(f"num_classes must be in 1..{len(CLASS_COLORS)}, got {num_classes}")
    rng = np.random.default_rng(seed)
    height, width = frame_size
    layout = SyntheticScene(frame_size, (), num_frames=num_frames, camera_velocity=camera_velocity)
    objects, paths = [], []
    for _ in range(int(rng.integers(num_objects[0], num_objects[1] + 1))):
        for _ in range(PLACEMENT_ATTEMPTS):
            w = min(int(rng.integers(object_size[0], object_size[1] + 1)), width)
            h = min(int(rng.integers(object_size[0], object_size[1] + 1)), height)
            x1 = int(rng.integers(0, width - w + 1))
            y1 = int(rng.integers(0, height - h + 1))
            velocity = tuple(int(v) for v in rng.integers(-max_speed, max_speed + 1, size=2))
            class_id = int(rng.integers(num_classes))
            candidate = SceneObject(BBox(x1, y1, x1 + w, y1 + h), CLASS_COLORS[class_id], velocity, class_id)
            path = [object_box(candidate, t, layout) for t in range(num_frames)]
            if not any(_too_close(a, b, min_gap) for other in paths for a, b in zip(path, other)):
                objects.append(candidate)
                paths.append(path)
                break
        else:
            logger.debug(f"No room for object {len(objects) + 1} after {PLACEMENT_ATTEMPTS} draws")
    if len(objects) < num_objects[0]:
        raise SceneError(f"only {len(objects)} of at least {num_objects[0]} objects fit in a {width}x{height} frame")
    return SyntheticScene(
        frame_size=frame_size,
        objects=tuple(objects),
        texture_seed=int(rng.integers(2**31)),
        num_frames=num_frames,
        camera_velocity=camera_velocity,
    )


def evaluation_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 0, index])


def training_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 1, index])


def training_annotations(
    frame_size: tuple[int, int],
    num_sequences: int,
    num_frames: int,
    seed: int = 0,
    **scene_kwargs,
) -> AnnotationSet:
    """Ground truth of sequences drawn from a seed stream disjoint from the evaluation sequences."""
    frames = []
    for i in range(num_sequences):
        scene = random_scene(training_seed(seed, i), frame_size, num_frames, **scene_kwargs)
        for t in range(scene.num_frames):
            frames.append(
                FrameAnnotation(
                    len(frames),
                    [object_box(obj, t, scene) for obj in scene.objects],
                    [obj.class_id for obj in scene.objects],
                )
            )
    return AnnotationSet(frame_size, frames)


def _padded_frames(frames: Sequence[np.ndarray], model: MaskedViT) -> list[np.ndarray]:
    grid = model.config.grid
    padded = [pad_frame(np.asarray(f), grid.region_size) for f in frames]
    for frame in padded:
        if frame.shape[:2] != grid.frame_size:
            raise SpecMismatchError(f"padded frame {frame.shape[:2]} does not match model frame {grid.frame_size}")
    return padded


def calibrate_head(
    model: MaskedViT,
    frames: Sequence[np.ndarray],
    boxes: Sequence[Sequence[BBox]],
    classes: Optional[Sequence[Optional[Sequence[int]]]] = None,
    **head_kwargs,
) -> DetectionHead:
    """Fit the detection head on the dense features of the given frames."""
    if len(frames) != len(boxes):
        raise DataError(f"{len(frames)} calibration frames for {len(boxes)} box lists")
    classes = classes if classes is not None else [None] * len(frames)
    grid = model.config.grid
    features, targets = [], []
    for frame, frame_boxes, frame_classes in zip(_padded_frames(frames, model), boxes, classes):
        features.append(forward_dense(frame, model, ReferenceState.for_model(model.config)))
        targets.append(token_targets(frame_boxes, frame_classes, grid))
    return DetectionHead.fit(features, targets, grid, **head_kwargs)


@dataclass(frozen=True)
class FeatureError:
    """Distance of a frame's features from the dense oracle's."""

    relative_frobenius: float
    selected_max_abs: float

    def to_dict(self) -> dict:
        return {"relative_frobenius": self.relative_frobenius, "selected_max_abs": self.selected_max_abs}


def feature_error(features: torch.Tensor, oracle: torch.Tensor, locations: Optional[np.ndarray] = None) -> FeatureError:
    diff = features - oracle
    norm = float(torch.linalg.norm(oracle))
    relative = float(torch.linalg.norm(diff)) / norm if norm > 0 else float(torch.linalg.norm(diff))
    if locations is None:
        selected = diff
    else:
        selected = diff.index_select(0, torch.as_tensor(locations, dtype=torch.int64))
    return FeatureError(relative, float(selected.abs().max()) if selected.numel() else 0.0)


@dataclass
class FrameRecord:
    index: int
    kind: FrameKind
    detections: list[Detection]
    cost: CostReport
    keep_rate: float
    feature_error: Optional[FeatureError] = None

    def to_dict(self) -> dict:
        data = {
            "index": self.index,
            "kind": self.kind.value,
            "tokens_processed": self.cost.tokens_processed,
            "keep_rate": self.keep_rate,
            "num_detections": len(self.detections),
            "cost": self.cost.to_dict(),
        }
        if self.feature_error is not None:
            data["feature_error"] = self.feature_error.to_dict()
        return data


@dataclass
class OracleResult:
    features: list[torch.Tensor]
    detections: list[list[Detection]]


@dataclass
class RunResult:
    frames: list[FrameRecord]
    period: int
    static_keep_rate: float
    masking: str
    backbone: str
    num_tokens: int
    static_keep_count: int
    evaluation: Optional[EvalResult] = None
    masked_evaluation: Optional[EvalResult] = None
    oracle_evaluation: Optional[EvalResult] = None
    # Last frame only: the masked features and, with the oracle on, the dense ones.
    final_features: Optional[torch.Tensor] = None
    final_oracle_features: Optional[torch.Tensor] = None

    @property
    def detections(self) -> list[list[Detection]]:
        return [f.detections for f in self.frames]

    @property
    def num_full_frames(self) -> int:
        return sum(f.kind is FrameKind.FULL for f in self.frames)

    @property
    def has_oracle(self) -> bool:
        return any(f.feature_error is not None for f in self.frames)

    def mean(self, attribute: str) -> float:
        return float(np.mean([getattr(f.cost, attribute) for f in self.frames]))

    @property
    def patch_keep_rate(self) -> float:
        return self.mean("tokens_processed") / self.num_tokens

    def summary_row(self, dataset: str = DATASET_NAME) -> dict:
        """One results-CSV row; per-frame quantities are averaged over all frames."""
        evaluation = self.evaluation or EvalResult.from_counts(0, 0, 0, DEFAULT_IOU_THRESHOLD)
        row = {
            "dataset": dataset,
            "backbone": self.backbone,
            "tokens_processed": self.mean("tokens_processed"),
            "patch_keep_rate": self.patch_keep_rate,
            "period": self.period,
            "static_keep_rate": self.static_keep_rate,
            "precision": evaluation.precision,
            "recall": evaluation.recall,
            "gmacs": self.mean("backbone_gmacs"),
            "buffer_mb": self.frames[0].cost.buffer_mb,
            "scatter_gather_ops": self.mean("scatter_gather_ops"),
            "masking": self.masking,
        }
        row = {column: row[column] for column in CSV_COLUMNS}
        if self.has_oracle:
            oracle = self.oracle_evaluation or EvalResult.from_counts(0, 0, 0, DEFAULT_IOU_THRESHOLD)
            errors = [f.feature_error for f in self.frames]
            row.update(
                {
                    "oracle_precision": oracle.precision,
                    "oracle_recall": oracle.recall,
                    "mean_relative_error": float(np.mean([e.relative_frobenius for e in errors])),
                    "max_selected_error": float(max(e.selected_max_abs for e in errors)),
                }
            )
            row = {column: row[column] for column in CSV_COLUMNS + ORACLE_COLUMNS}
        return row

    def to_dict(self, header: Optional[dict] = None) -> dict:
        data = dict(header or {})
        data.update(
            {
                "period": self.period,
                "static_keep_rate": self.static_keep_rate,
                "masking": self.masking,
                "backbone": self.backbone,
                "num_tokens": self.num_tokens,
                "static_keep_count": self.static_keep_count,
                "num_full_frames": self.num_full_frames,
                "evaluation": self.evaluation.to_dict() if self.evaluation else None,
                "masked_evaluation": self.masked_evaluation.to_dict() if self.masked_evaluation else None,
                "oracle_evaluation": self.oracle_evaluation.to_dict() if self.oracle_evaluation else None,
                "frames": [f.to_dict() for f in self.frames],
            }
        )
        return data


def run_oracle(frames: Sequence[np.ndarray], model: MaskedViT, detection_head: Optional[DetectionHead] = None) -> OracleResult:
    """Dense forward on every frame; the comparator for masked runs."""
    state = ReferenceState.for_model(model.config)
    features, detections = [], []
    for t, frame in enumerate(_padded_frames(frames, model)):
        x = forward_dense(frame, model, state, t)
        features.append(x)
        detections.append(head(x, detection_head.threshold, detection_head) if detection_head is not None else [])
    return OracleResult(features, detections)


def _static_pairs(annotations: Annotations) -> list[tuple[int, Sequence[BBox]]]:
    if isinstance(annotations, AnnotationSet):
        return annotations.pairs()
    return list(annotations)


def run_sequence(
    frames: Sequence[np.ndarray],
    static_annotations: Annotations,
    model: MaskedViT,
    sched: MaskSchedule,
    detection_head: DetectionHead,
    ground_truth: Optional[Sequence[Sequence[BBox]]] = None,
    oracle: Union[bool, OracleResult] = False,
    masking: str = "combined",
    show_progress: bool = False,
) -> RunResult:
    """
    Run the full/masked schedule over one sequence with a fresh reference state.

    `masking` selects the masked-frame input mask: `combined` (static and dynamic), `static` only,
    or `dynamic` only (the static keep rate is ignored).
    """
    if len(frames) == 0:
        raise DataError("empty sequence")
    if masking not in MASKING_MODES:
        raise ConfigError(f"masking must be one of {MASKING_MODES}, got {masking}")
    if ground_truth is not None and len(ground_truth) != len(frames):
        raise DataError(f"{len(ground_truth)} ground-truth frames for {len(frames)} frames")
    config = model.config
    padded = _padded_frames(frames, model)
    if oracle is True:
        oracle = run_oracle(frames, model, detection_head)

    if masking == "dynamic":
        static = RegionMask.empty(config.grid)
    else:
        static = build_static_mask(_static_pairs(static_annotations), config.grid, sched.static_keep_rate)
    logger.debug(f"Static mask keeps {static.keep_count}/{config.num_tokens} regions ({masking} masking)")

    state = ReferenceState.for_model(config)
    records = []
    previous: list[Detection] = []
    for t, frame in enumerate(tqdm(padded, desc=f"P={sched.period} k_s={sched.static_keep_rate:g}", disable=not show_progress)):
        with MDC(progress=f"{ceil(t / len(padded) * 100)}%"):
            trace = OpTrace()
            locations = None
            if schedule_frame(t, sched) is FrameKind.FULL:
                features = forward_dense(frame, model, state, t, trace)
                kind = FrameKind.FULL
            else:
                mask = static if masking == "static" else build_frame_mask(static, [d.box for d in previous], sched)
                features = forward_masked(frame, mask, model, state, trace)
                kind = FrameKind.MASKED
                locations = mask.locations()
            cost = measure_run(trace, config)
            detections = head(features, detection_head.threshold, detection_head)
            error = None
            if isinstance(oracle, OracleResult):
                error = feature_error(features, oracle.features[t], locations)
            records.append(
                FrameRecord(t, kind, detections, cost, cost.tokens_processed / config.num_tokens, error)
            )
            logger.debug(
                f"Frame {t} {kind.value}: {cost.tokens_processed} tokens, {cost.macs} MACs, "
                f"{cost.scatter_gather_ops} scatter/gather ops, {len(detections)} detections"
            )
            previous = detections

    result = RunResult(
        frames=records,
        period=sched.period,
        static_keep_rate=sched.static_keep_rate,
        masking=masking,
        backbone=config.backbone,
        num_tokens=config.num_tokens,
        static_keep_count=static.keep_count,
        final_features=features,
        final_oracle_features=oracle.features[-1] if isinstance(oracle, OracleResult) else None,
    )
    if ground_truth is not None:
        result.evaluation = evaluate(result.detections, ground_truth)
        masked = [i for i, r in enumerate(records) if r.kind is FrameKind.MASKED]
        result.masked_evaluation = evaluate([records[i].detections for i in masked], [ground_truth[i] for i in masked])
        if isinstance(oracle, OracleResult):
            result.oracle_evaluation = evaluate(oracle.detections, ground_truth)
    return result


@dataclass
class MaskAblation:
    combined: RunResult
    static_only: RunResult
    dynamic_only: RunResult

    def runs(self) -> dict[str, RunResult]:
        return {"combined": self.combined, "static": self.static_only, "dynamic": self.dynamic_only}


def matched_static_keep_rate(run: RunResult, fallback: float) -> float:
    """A static keep rate whose mask has as many regions as the run's masked frames on average."""
    masked = [f.cost.tokens_processed for f in run.frames if f.kind is FrameKind.MASKED]
    if not masked:
        return fallback
    count = int(round(float(np.mean(masked))))
    return min(1.0, (count + 0.5) / run.num_tokens)


def ablate_masks(
    frames: Sequence[np.ndarray],
    static_annotations: Annotations,
    model: MaskedViT,
    sched: MaskSchedule,
    detection_head: DetectionHead,
    ground_truth: Optional[Sequence[Sequence[BBox]]] = None,
    show_progress: bool = False,
) -> MaskAblation:
    """Combined, static-only (k_s raised to the combined keep rate) and dynamic-only (k_s = 0) runs."""
    pairs = _static_pairs(static_annotations)
    combined = run_sequence(frames, pairs, model, sched, detection_head, ground_truth, masking="combined", show_progress=show_progress)
    static_sched = replace(sched, static_keep_rate=matched_static_keep_rate(combined, sched.static_keep_rate))
    static_only = run_sequence(frames, pairs, model, static_sched, detection_head, ground_truth, masking="static", show_progress=show_progress)
    dynamic_sched = replace(sched, static_keep_rate=0.0)
    dynamic_only = run_sequence(frames, pairs, model, dynamic_sched, detection_head, ground_truth, masking="dynamic", show_progress=show_progress)
    return MaskAblation(combined, static_only, dynamic_only)


@dataclass
class SequenceJob:
    """Arguments of one `run_sequence` call, minus the shared model."""

    frames: Sequence[np.ndarray]
    static_annotations: Annotations
    sched: MaskSchedule
    detection_head: DetectionHead
    ground_truth: Optional[Sequence[Sequence[BBox]]] = None
    oracle: Union[bool, OracleResult] = False
    masking: str = "combined"

    def run(self, model: MaskedViT) -> RunResult:
        return run_sequence(
            self.frames,
            self.static_annotations,
            model,
            self.sched,
            self.detection_head,
            self.ground_truth,
            self.oracle,
            self.masking,
        )


def run_many(jobs: Sequence[SequenceJob], model: MaskedViT, num_threads: int = 1, show_progress: bool = False) -> list[RunResult]:
    """Run independent sequences concurrently; results come back in job order."""
    futures = []
    results = []
    with ThreadPoolExecutor(max_workers=max(1, num_threads)) as executor:
        with tqdm(total=len(jobs), desc="Sequences", disable=not show_progress) as pbar:
            for job in jobs:
                futures.append(executor.submit(job.run, model))
            for future in futures:
                results.append(future.result())
                pbar.update()
    return results


def pool_evaluations(evaluations: Iterable[Optional[EvalResult]]) -> EvalResult:
    """Sum match/detection/ground-truth counts across runs."""
    evaluations = [e for e in evaluations if e is not None]
    if not evaluations:
        return EvalResult.from_counts(0, 0, 0, DEFAULT_IOU_THRESHOLD)
    return EvalResult.from_counts(
        sum(e.matches for e in evaluations),
        sum(e.num_detections for e in evaluations),
        sum(e.num_ground_truths for e in evaluations),
        evaluations[0].iou_threshold,
    )


def pooled_evaluation(results: Sequence[RunResult], masked_only: bool = False) -> EvalResult:
    return pool_evaluations(r.masked_evaluation if masked_only else r.evaluation for r in results)


def aggregate_row(results: Sequence[RunResult], dataset: str = DATASET_NAME) -> dict:
    """One results-CSV row for several sequences run with the same schedule: means, with pooled precision and recall."""
    rows = [r.summary_row(dataset) for r in results]
    row = dict(rows[0])
    for column in ("tokens_processed", "patch_keep_rate", "gmacs", "scatter_gather_ops"):
        row[column] = float(np.mean([r[column] for r in rows]))
    pooled = pooled_evaluation(results)
    row["precision"], row["recall"] = pooled.precision, pooled.recall
    if "mean_relative_error" in row:
        oracle = pool_evaluations(r.oracle_evaluation for r in results)
        row["oracle_precision"], row["oracle_recall"] = oracle.precision, oracle.recall
        row["mean_relative_error"] = float(np.mean([r["mean_relative_error"] for r in rows]))
        row["max_selected_error"] = float(max(r["max_selected_error"] for r in rows))
    return row


def sequence_scenes(
    seed: int,
    num_sequences: int,
    frame_size: tuple[int, int],
    num_frames: int,
    **scene_kwargs,
) -> list[SyntheticScene]:
    return [random_scene(evaluation_seed(seed, i), frame_size, num_frames, **scene_kwargs) for i in range(num_sequences)]


def save_sequence(sequence: GeneratedSequence, directory: str) -> tuple[str, str]:
    os.makedirs(directory, exist_ok=True)
    frames_path = write_frames(sequence.frames, os.path.join(directory, FRAMES_FILE))
    annotations_path = write_annotations(sequence.to_annotations(), os.path.join(directory, ANNOTATIONS_FILE))
    return frames_path, annotations_path


def load_sequence(directory: str) -> GeneratedSequence:
    frames = read_frames(os.path.join(directory, FRAMES_FILE))
    annotations = read_annotations(os.path.join(directory, ANNOTATIONS_FILE))
    if len(annotations.frames) != frames.shape[0]:
        raise DataError(f"{directory}: {frames.shape[0]} frames but {len(annotations.frames)} annotated frames")
    boxes = annotations.boxes()
    classes = [c if c is not None else [0] * len(b) for b, c in zip(boxes, annotations.classes())]
    return GeneratedSequence(frames, boxes, classes)


def sequence_dirs(directory: str) -> list[str]:
    found = sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.startswith(SEQUENCE_DIR_PREFIX) and os.path.isdir(os.path.join(directory, name))
    )
    if not found:
        raise DataError(f"{directory}: no {SEQUENCE_DIR_PREFIX}* sequence directories")
    return found
