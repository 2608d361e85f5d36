"""
Per-token detection head and IoU-based evaluation.

The head is a linear objectness score plus a linear class score on backbone features. Active
tokens are grouped into connected components on the region grid and every component becomes one
box. Both linear maps are fitted in closed form (ridge least squares) on token labels derived from
ground-truth boxes; nothing is trained by gradient descent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage
from torch import Tensor

from vidmask.constant import (
    DEFAULT_CONNECTIVITY,
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_OBJECTNESS_THRESHOLD,
    DEFAULT_RIDGE,
    OBJECTNESS_LOGIT_TARGET,
)
from vidmask.custom_exception import ConfigError, DataError, ShapeError
from vidmask.mask_builder import BBox, GridSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"detection score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"box": self.box.as_list(), "score": float(self.score), "class": int(self.class_id)}

    @classmethod
    def from_dict(cls, data: dict) -> Detection:
        return cls(BBox.from_list(data["box"]), float(data["score"]), int(data.get("class", 0)))


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f1: float
    matches: int
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    num_detections: int = 0
    num_ground_truths: int = 0

    @classmethod
    def from_counts(cls, matches: int, num_detections: int, num_ground_truths: int, iou_threshold: float) -> EvalResult:
        """Precision and recall are reported as 0 when their denominator is 0; F1 likewise."""
        precision = matches / num_detections if num_detections else 0.0
        recall = matches / num_ground_truths if num_ground_truths else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1, matches, iou_threshold, num_detections, num_ground_truths)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matches": self.matches,
            "iou_threshold": self.iou_threshold,
            "num_detections": self.num_detections,
            "num_ground_truths": self.num_ground_truths,
        }


@dataclass(frozen=True)
class TokenTargets:
    """Per-token labels in row-major order: `objects` marks object tokens, `classes` is -1 on background."""

    objects: np.ndarray
    classes: np.ndarray


def token_targets(boxes: Sequence[BBox], classes: Optional[Sequence[int]], spec: GridSpec) -> TokenTargets:
    """Label a region with a box when the region's centre pixel lies inside it; later boxes win overlaps."""
    if classes is None:
        classes = [0] * len(boxes)
    if len(classes) != len(boxes):
        raise ShapeError(f"{len(classes)} class ids for {len(boxes)} boxes")
    r = spec.region_size
    centre_y = np.arange(spec.rows) * r + r // 2
    centre_x = np.arange(spec.cols) * r + r // 2
    label = np.full((spec.rows, spec.cols), -1, dtype=np.int64)
    for box, class_id in zip(boxes, classes):
        inside_y = (centre_y >= box.y1) & (centre_y < box.y2)
        inside_x = (centre_x >= box.x1) & (centre_x < box.x2)
        label[np.ix_(inside_y, inside_x)] = int(class_id)
    label = label.ravel()
    return TokenTargets(objects=label >= 0, classes=label)


def connected_components(active: np.ndarray, connectivity: int = DEFAULT_CONNECTIVITY) -> list[np.ndarray]:
    """
    Connected groups of true cells as arrays of row-major locations.

    Components are ordered by their smallest location and each array is sorted, so the result does
    not depend on how the grid was traversed.
    """
    if connectivity not in (4, 8):
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
    active = np.asarray(active, dtype=bool)
    if active.ndim != 2:
        raise ShapeError(f"activation grid must be 2-D, got shape {active.shape}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, count = ndimage.label(active, structure=structure)
    flat = labels.ravel()
    components = [np.flatnonzero(flat == i) for i in range(1, count + 1)]
    return sorted(components, key=lambda c: int(c[0]))


class DetectionHead:
    def __init__(
        self,
        objectness_weight: Tensor,
        objectness_bias: float,
        class_weight: Tensor,
        class_bias: Tensor,
        spec: GridSpec,
        threshold: float = DEFAULT_OBJECTNESS_THRESHOLD,
        connectivity: int = DEFAULT_CONNECTIVITY,
    ):
        if not 0.0 <= threshold <= 1.0:
            raise ConfigError(f"objectness threshold must be in [0, 1], got {threshold}")
        if class_weight.ndim != 2 or class_weight.shape[0] != objectness_weight.shape[0]:
            raise ShapeError(
                f"class weight {tuple(class_weight.shape)} does not match feature width {objectness_weight.shape[0]}"
            )
        self.objectness_weight = objectness_weight
        self.objectness_bias = float(objectness_bias)
        self.class_weight = class_weight
        self.class_bias = class_bias
        self.spec = spec
        self.threshold = threshold
        self.connectivity = connectivity

    @property
    def num_classes(self) -> int:
        return int(self.class_weight.shape[1])

    @classmethod
    def fit(
        cls,
        features: Sequence[Tensor],
        targets: Sequence[TokenTargets],
        spec: GridSpec,
        ridge: float = DEFAULT_RIDGE,
        threshold: float = DEFAULT_OBJECTNESS_THRESHOLD,
        connectivity: int = DEFAULT_CONNECTIVITY,
    ) -> DetectionHead:
        """
        Ridge least-squares fit of both linear maps on stacked per-token features.

        Objectness regresses onto logits of +/-4; the class map regresses one-hot targets over
        object tokens only.
        """
        if not features or len(features) != len(targets):
            raise ShapeError(f"need one target set per feature map, got {len(features)} and {len(targets)}")
        x = torch.cat([f.to(torch.float64) for f in features])
        objects = torch.from_numpy(np.concatenate([t.objects for t in targets]))
        classes = torch.from_numpy(np.concatenate([t.classes for t in targets]))
        if x.shape[0] != objects.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows for {objects.shape[0]} token labels")

        y = torch.where(objects, OBJECTNESS_LOGIT_TARGET, -OBJECTNESS_LOGIT_TARGET).to(torch.float64)
        w, b = _ridge_solve(x, y.unsqueeze(1), ridge)
        num_classes = int(classes.max()) + 1 if bool(objects.any()) else 1
        if bool(objects.any()):
            one_hot = torch.nn.functional.one_hot(classes[objects], num_classes).to(torch.float64)
            cw, cb = _ridge_solve(x[objects], one_hot, ridge)
        else:
            cw = torch.zeros(x.shape[1], 1, dtype=torch.float64)
            cb = torch.zeros(1, dtype=torch.float64)
        logger.debug(
            f"Fitted detection head on {x.shape[0]} tokens ({int(objects.sum())} object tokens, {num_classes} classes)"
        )
        return cls(w[:, 0], float(b[0]), cw, cb, spec, threshold, connectivity)

    def objectness(self, features: Tensor) -> np.ndarray:
        logits = features.to(torch.float64) @ self.objectness_weight + self.objectness_bias
        return torch.sigmoid(logits).numpy()

    def classify(self, features: Tensor) -> np.ndarray:
        return (features.to(torch.float64) @ self.class_weight + self.class_bias).argmax(dim=1).numpy()

    def __call__(self, features: Tensor) -> list[Detection]:
        return head(features, self.threshold, self)


def _ridge_solve(x: Tensor, y: Tensor, ridge: float) -> tuple[Tensor, Tensor]:
    """Solve min |[x 1] w - y|^2 + ridge |w|^2 (bias unregularised) for weights and bias."""
    design = torch.cat([x, torch.ones(x.shape[0], 1, dtype=x.dtype)], dim=1)
    penalty = torch.eye(design.shape[1], dtype=x.dtype) * ridge
    penalty[-1, -1] = 0.0
    solution = torch.linalg.solve(design.T @ design + penalty, design.T @ y)
    return solution[:-1], solution[-1]


def head(features: Tensor, threshold: float, detection_head: DetectionHead) -> list[Detection]:
    """Objectness above `threshold`, grouped into components, one Detection per component."""
    spec = detection_head.spec
    if features.ndim != 2 or features.shape[0] != spec.num_tokens:
        raise ShapeError(f"features of shape {tuple(features.shape)} do not cover {spec.num_tokens} tokens")
    scores = detection_head.objectness(features)
    active = (scores > threshold).reshape(spec.rows, spec.cols)
    if not active.any():
        return []
    classes = detection_head.classify(features)
    r = spec.region_size
    detections = []
    for locations in connected_components(active, detection_head.connectivity):
        rows, cols = np.divmod(locations, spec.cols)
        box = BBox(int(cols.min()) * r, int(rows.min()) * r, (int(cols.max()) + 1) * r, (int(rows.max()) + 1) * r)
        class_id = int(np.bincount(classes[locations]).argmax())
        detections.append(Detection(box, float(scores[locations].max()), class_id))
    return detections


def iou(a: BBox, b: BBox) -> float:
    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def match_frame(dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float) -> int:
    """Greedy matching: highest score first, each detection takes its best unmatched box at or above the threshold."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    matched = [False] * len(gts)
    matches = 0
    for i in order:
        best, best_iou = -1, iou_threshold
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            overlap = iou(dets[i].box, gt)
            if overlap >= best_iou and (best < 0 or overlap > best_iou):
                best, best_iou = j, overlap
        if best >= 0:
            matched[best] = True
            matches += 1
    return matches


def evaluate(
    dets: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[BBox]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> EvalResult:
    if len(dets) != len(gts):
        raise ShapeError(f"{len(dets)} detection frames for {len(gts)} ground-truth frames")
    matches = sum(match_frame(d, g, iou_threshold) for d, g in zip(dets, gts))
    return EvalResult.from_counts(
        matches,
        sum(len(d) for d in dets),
        sum(len(g) for g in gts),
        iou_threshold,
    )
