"""Detection scoring: IoU, greedy matching, VOC-style average precision, mAP."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .classifier import Detection
from .exceptions import InputError, ParseError
from .pointcloud_io import BBox2D

__all__ = [
    "GroundTruthBox",
    "EvalReport",
    "iou",
    "match_greedy",
    "average_precision",
    "evaluate",
    "load_frames",
    "dump_frames",
]

DEFAULT_IOU_THRESH = 0.5


@dataclass(frozen=True)
class GroundTruthBox:
    bbox: BBox2D
    label: str

    def to_json(self) -> dict:
        return {"bbox": self.bbox.as_list(), "label": self.label}


def iou(a: BBox2D, b: BBox2D) -> float:
    """Intersection over union of two pixel boxes (0.0 when disjoint)."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _prob_order(dets):
    # descending probability, detection index breaks ties
    return sorted(range(len(dets)), key=lambda k: (-dets[k].prob, k))


def match_greedy(dets, gts, iou_thresh: float = DEFAULT_IOU_THRESH, class_aware: bool = True):
    """One-to-one matching of detections to ground truth within a frame.

    Detections are visited by descending probability (index ascending on
    ties); each takes the still-unmatched ground-truth box with the highest
    IoU >= ``iou_thresh`` (lowest index on ties), restricted to the same label
    when ``class_aware``. Returns ``[(det_index, gt_index, iou), ...]`` in
    visiting order.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    used = set()
    matches = []
    for d in _prob_order(dets):
        det = dets[d]
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if g in used or (class_aware and gt.label != det.label):
                continue
            v = iou(det.bbox, gt.bbox)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = g, v
        if best is not None:
            used.add(best)
            matches.append((d, best, best_iou))
    return matches


def _is_framed(seq):
    return bool(seq) and isinstance(seq[0], (list, tuple))


def average_precision(dets, gts, iou_thresh: float = DEFAULT_IOU_THRESH) -> float:
    """All-point interpolated AP for one class.

    ``dets`` and ``gts`` are either flat lists (a single frame) or
    frame-aligned lists of lists. Detections from all frames are ranked by
    descending probability; precision at each recall level is replaced by the
    maximum precision at any higher recall before integrating. Returns NaN for
    a class without ground truth.
    """
    if not _is_framed(dets) and not _is_framed(gts):
        dets, gts = [list(dets)], [list(gts)]
    if len(dets) != len(gts):
        raise InputError(f"{len(dets)} detection frames vs {len(gts)} ground-truth frames")
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        return math.nan
    ranked = []  # (prob, frame, det index, is_tp)
    for f, (fd, fg) in enumerate(zip(dets, gts)):
        hit = {d for d, _, _ in match_greedy(fd, fg, iou_thresh, class_aware=False)}
        ranked.extend((det.prob, f, k, k in hit) for k, det in enumerate(fd))
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))

    precision, recall = [], []
    tp = 0
    for k, (_, _, _, is_tp) in enumerate(ranked, 1):
        tp += is_tp
        precision.append(Fraction(tp, k))
        recall.append(Fraction(tp, n_gt))
    # precision envelope: running max from the right
    for k in range(len(precision) - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    ap = Fraction(0)
    prev_r = Fraction(0)
    for p, r in zip(precision, recall):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


@dataclass
class EvalReport:
    """Dataset-level scores.

    ``mean_iou`` averages matched-pair IoUs; ``mean_best_iou`` averages, over
    all ground-truth boxes, the best IoU any detection achieves (0 if none).
    ``matches`` holds ``(frame, det_index, gt_index, iou)``.
    """

    mean_iou: float
    per_class_ap: dict[str, float]
    map_score: float
    matches: list[tuple[int, int, int, float]] = field(default_factory=list)
    mean_best_iou: float = 0.0
    counts: dict[str, int] = field(default_factory=dict)
    class_aware: bool = True
    iou_thresh: float = DEFAULT_IOU_THRESH

    def to_json(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "mean_best_iou": self.mean_best_iou,
            "per_class_ap": dict(sorted(self.per_class_ap.items())),
            "map": self.map_score,
            "counts": self.counts,
            "class_aware": self.class_aware,
            "iou_thresh": self.iou_thresh,
        }


def evaluate(
    detections,
    ground_truth,
    iou_thresh: float = DEFAULT_IOU_THRESH,
    class_aware: bool = True,
) -> EvalReport:
    """Score frame-aligned detections against ground truth.

    Classes without ground truth have no AP and are left out of the mAP.
    """
    detections = [list(f) for f in detections]
    ground_truth = [list(f) for f in ground_truth]
    if not ground_truth:
        raise InputError("empty dataset")
    if len(detections) != len(ground_truth):
        raise InputError(f"{len(detections)} detection frames vs {len(ground_truth)} ground-truth frames")

    matches = []
    best_ious = []
    for f, (fd, fg) in enumerate(zip(detections, ground_truth)):
        matches.extend((f, d, g, v) for d, g, v in match_greedy(fd, fg, iou_thresh, class_aware))
        for gt in fg:
            cands = [iou(d.bbox, gt.bbox) for d in fd if not class_aware or d.label == gt.label]
            best_ious.append(max(cands, default=0.0))

    labels = sorted({g.label for fg in ground_truth for g in fg})
    per_class = {}
    for label in labels:
        cd = [[d for d in fd if d.label == label] for fd in detections]
        cg = [[g for g in fg if g.label == label] for fg in ground_truth]
        per_class[label] = average_precision(cd, cg, iou_thresh)

    n_det = sum(len(f) for f in detections)
    n_gt = sum(len(f) for f in ground_truth)
    counts = {
        "frames": len(ground_truth),
        "detections": n_det,
        "ground_truth": n_gt,
        "true_positives": len(matches),
        "false_positives": n_det - len(matches),
        "false_negatives": n_gt - len(matches),
    }
    return EvalReport(
        mean_iou=sum(m[3] for m in matches) / len(matches) if matches else 0.0,
        per_class_ap=per_class,
        map_score=sum(per_class.values()) / len(per_class) if per_class else 0.0,
        matches=matches,
        mean_best_iou=sum(best_ious) / len(best_ious) if best_ious else 0.0,
        counts=counts,
        class_aware=class_aware,
        iou_thresh=iou_thresh,
    )


# -- JSON frame files ----------------------------------------------------------


def load_frames(source, *, with_prob: bool) -> list[tuple[str, list]]:
    """Read ``[{"frame": name, "boxes": [{"bbox": [...], "label": s[, "prob": p]}]}]``.

    Returns ``(frame, boxes)`` pairs with :class:`Detection` boxes when
    ``with_prob`` and :class:`GroundTruthBox` otherwise.
    """
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    try:
        doc = json.loads(text)
        if not isinstance(doc, list):
            raise TypeError("top level must be a list of frames")
        frames = []
        for entry in doc:
            boxes = []
            for b in entry["boxes"]:
                bbox = BBox2D(*b["bbox"])
                if with_prob:
                    p = float(b["prob"])
                    if not 0.0 <= p <= 1.0:
                        raise ValueError(f"prob {p} outside [0, 1]")
                    boxes.append(Detection(bbox, str(b["label"]), p))
                else:
                    boxes.append(GroundTruthBox(bbox, str(b["label"])))
            frames.append((str(entry["frame"]), boxes))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: invalid frame file: {exc}") from None
    names = [f for f, _ in frames]
    if len(set(names)) != len(names):
        raise ParseError(f"{source}: duplicate frame names")
    return frames


def dump_frames(frames) -> str:
    """Serialize ``(frame, boxes)`` pairs; boxes are Detections or GroundTruthBoxes."""
    doc = [{"frame": name, "boxes": [b.to_json() for b in boxes]} for name, boxes in frames]
    return json.dumps(doc, indent=2) + "\n"
