"""Blob detector with an SSD-shaped output, box geometry, and the multibox loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .autodiff import tensor as T

CLASSES = ("ball", "head")
# Column 0 of class scores is background; class i in CLASSES is column i + 1.
BACKGROUND_CLASS = 0


@dataclass(frozen=True)
class ColorRule:
    """A pixel belongs to the class when ``channel`` exceeds ``min_value`` and beats every
    other channel by at least ``margin``."""

    channel: int
    min_value: float = 0.5
    margin: float = 0.25

    def mask(self, image: np.ndarray) -> np.ndarray:
        main = image[self.channel]
        others = np.delete(image, self.channel, axis=0).max(axis=0)
        return (main > self.min_value) & (main - others > self.margin)


DEFAULT_COLOR_SPEC = {"ball": ColorRule(0), "head": ColorRule(2)}


def _check_box(box) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = (float(v) for v in box)
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"invalid normalized box {box}")
    return x0, y0, x1, y1


@dataclass(frozen=True)
class Detection:
    class_id: str
    box: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        object.__setattr__(self, "box", _check_box(self.box))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def center(self) -> np.ndarray:
        return box_center(self.box)


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: str
    box: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "box", _check_box(self.box))


def box_center(box) -> np.ndarray:
    return np.array([(box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0])


def detect(image: np.ndarray, color_spec: dict[str, ColorRule] | None = None,
           min_pixels: int = 4) -> list[Detection]:
    """Largest 4-connected colour blob per class, as a tight normalized box."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"detect expects a (3, H, W) image, got {image.shape}")
    spec = DEFAULT_COLOR_SPEC if color_spec is None else color_spec
    _, h, w = image.shape
    out = []
    for class_id, rule in spec.items():
        labels, n = ndimage.label(rule.mask(image))
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel())[1:]
        best = int(np.argmax(sizes))
        area = int(sizes[best])
        if area < min_pixels:
            continue
        rows, cols = np.nonzero(labels == best + 1)
        box = (cols.min() / w, rows.min() / h, (cols.max() + 1) / w, (rows.max() + 1) / h)
        score = min(1.0, 10.0 * area / (h * w))
        out.append(Detection(class_id, box, score))
    return out


def iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-class suppression; stable for equal scores."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in [0, 1]")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: list[Detection] = []
    for i in order:
        d = detections[i]
        if all(k.class_id != d.class_id or iou(k.box, d.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


def default_boxes(grid: int = 4, scale: float = 0.3,
                  aspect_ratios: Sequence[float] = (1.0, 2.0, 0.5)) -> np.ndarray:
    """Single-scale grid of anchor boxes clipped to the unit square, shape (grid*grid*len(ar), 4)."""
    out = []
    for r in range(grid):
        for c in range(grid):
            cx, cy = (c + 0.5) / grid, (r + 0.5) / grid
            for ar in aspect_ratios:
                w, h = scale * np.sqrt(ar), scale / np.sqrt(ar)
                out.append([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
    return np.clip(np.array(out), 0.0, 1.0)


@dataclass
class Matching:
    indicator: np.ndarray  # (n_defaults, n_truths) bool
    assigned: np.ndarray = field(init=False)  # ground-truth index per default, -1 if unmatched

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=bool)
        if np.any(self.indicator.sum(axis=1) > 1):
            raise ValueError("a default box may match at most one ground truth")
        if self.indicator.shape[1] == 0:
            self.assigned = np.full(self.indicator.shape[0], -1)
            return
        has = self.indicator.any(axis=1)
        self.assigned = np.where(has, self.indicator.argmax(axis=1), -1)

    @property
    def n_matched(self) -> int:
        return int(self.indicator.sum())


def match_default_boxes(defaults, ground_truths, threshold: float = 0.5) -> Matching:
    defaults = np.asarray(defaults, dtype=np.float64).reshape(-1, 4)
    if len(defaults) == 0:
        raise ValueError("need at least one default box")
    gts = np.asarray([g.box if isinstance(g, GroundTruthBox) else g for g in ground_truths],
                     dtype=np.float64).reshape(-1, 4)
    n_def, n_gt = len(defaults), len(gts)
    assigned = np.full(n_def, -1)
    if n_gt:
        ious = iou_matrix(defaults, gts)
        best_gt = ious.argmax(axis=1)
        over = ious[np.arange(n_def), best_gt] >= threshold
        assigned[over] = best_gt[over]
        # Forced matches win over threshold matches.  Ground truths claim their
        # best still-unclaimed default in index order.
        claimed = np.zeros(n_def, dtype=bool)
        for j in range(n_gt):
            if claimed.all():
                break
            col = np.where(claimed, -1.0, ious[:, j])
            i = int(col.argmax())
            assigned[i] = j
            claimed[i] = True
    indicator = np.zeros((n_def, n_gt), dtype=bool)
    rows = np.nonzero(assigned >= 0)[0]
    indicator[rows, assigned[rows]] = True
    return Matching(indicator)


def multibox_loss(matching: Matching, class_scores, pred_boxes, gt_boxes, gt_labels: Sequence[int],
                  alpha_loc: float = 1.0) -> T.Tensor:
    """(conf + alpha_loc * loc) / N over all default boxes.

    class_scores: (n_defaults, K) logits, column 0 = background.
    pred_boxes: (n_defaults, 4) predicted boxes; gt_boxes: (n_truths, 4);
    gt_labels: class column (>= 1) of each ground truth.
    """
    n = matching.n_matched
    if n == 0:
        raise ValueError("multibox loss is undefined with no matched default boxes")
    scores = T.as_tensor(class_scores)
    preds = T.as_tensor(pred_boxes)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.asarray(gt_labels, dtype=int)
    assigned = matching.assigned
    targets = np.where(assigned >= 0, labels[np.maximum(assigned, 0)], BACKGROUND_CLASS)
    one_hot = np.zeros(scores.shape)
    one_hot[np.arange(len(targets)), targets] = 1.0
    conf = -T.sum(T.log_softmax(scores, axis=1) * one_hot)
    rows = np.nonzero(assigned >= 0)[0]
    loc = T.sum(T.absolute(preds[rows] - gt[assigned[rows]]))
    return (conf + alpha_loc * loc) * (1.0 / n)


# -- annotation interchange ("class x_min y_min x_max y_max") ----------------

def parse_annotations(text: str) -> list[GroundTruthBox]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 'class x_min y_min x_max y_max'")
        try:
            box = tuple(float(p) for p in parts[1:])
            out.append(GroundTruthBox(parts[0], box))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def format_annotations(boxes: Iterable[GroundTruthBox]) -> str:
    return "".join(f"{b.class_id} {' '.join(repr(float(v)) for v in b.box)}\n" for b in boxes)


def read_annotations(path: str | Path) -> list[GroundTruthBox]:
    return parse_annotations(Path(path).read_text())


def write_annotations(boxes: Iterable[GroundTruthBox], path: str | Path) -> None:
    Path(path).write_text(format_annotations(boxes))


# -- observation builders for the detector pipelines -------------------------

class DistanceRing:
    """Five most recent normalized ball-head distances; zeros until filled."""

    size = 5

    def __init__(self):
        self.slots = np.zeros(self.size)
        self.cursor = 0

    def reset(self) -> None:
        self.slots[:] = 0.0
        self.cursor = 0

    def push(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"normalized distance {value} outside [0, 1]")
        self.slots[self.cursor] = value
        self.cursor = (self.cursor + 1) % self.size

    def contents(self) -> np.ndarray:
        """Oldest to newest."""
        return np.roll(self.slots, -self.cursor)


def normalized_center_distance(a: Detection, b: Detection) -> float:
    return float(np.linalg.norm(a.center - b.center) / np.sqrt(2.0))


def pipeline1_observe(front_image: np.ndarray | None, joints, ring: DistanceRing, step_index: int,
                      period: int = 5) -> np.ndarray:
    """Ring of ball-head distances (refreshed every ``period`` steps) followed by the joints.

    ``front_image`` is only read on refresh steps, so callers may pass None otherwise.
    """
    if step_index % period == 0:
        found = {d.class_id: d for d in detect(front_image)}
        if "ball" in found and "head" in found:
            ring.push(normalized_center_distance(found["ball"], found["head"]))
    return np.concatenate([ring.contents(), np.asarray(joints, dtype=np.float64)])


class BallNotDetected(RuntimeError):
    pass


def locate_ball(front_image: np.ndarray) -> np.ndarray:
    for d in detect(front_image):
        if d.class_id == "ball":
            return d.center
    raise BallNotDetected("ball not visible in the front camera")


def pipeline2_observe(cached_ball_xy: np.ndarray, joints) -> np.ndarray:
    return np.concatenate([np.asarray(cached_ball_xy, dtype=np.float64),
                           np.asarray(joints, dtype=np.float64)])
