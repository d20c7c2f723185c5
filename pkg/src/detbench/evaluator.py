"""mAP@0.5 evaluation and model selection.

Matching is greedy by descending confidence; each detection takes the
unmatched ground truth of its class with the highest IoU, provided that IoU
reaches the threshold.  AP is the area under the monotone precision envelope
(all-point interpolation).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .annotations import Detection, GroundTruth, box_iou, parse_detection_file, parse_label_file
from .errors import DetbenchError, UndefinedAPError

IOU_THRESHOLD = 0.5
SELECTION_TOL = 1e-6


@dataclass(frozen=True)
class MatchRecord:
    confidence: float
    class_id: int
    tp: bool
    gt_index: Optional[int]
    iou: float


@dataclass
class MatchOutcome:
    records: List[MatchRecord]  # in descending-confidence order
    n_gt: Dict[int, int]
    false_negatives: int

    @property
    def total_gt(self) -> int:
        return sum(self.n_gt.values())


def match(gts: Sequence[GroundTruth], dets: Sequence[Detection], iou_threshold: float = IOU_THRESHOLD) -> MatchOutcome:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)  # stable for ties
    taken = [False] * len(gts)
    records = []
    for i in order:
        det = dets[i]
        best, best_iou = None, -1.0
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_id != det.class_id:
                continue
            v = box_iou(det.box, gt.box)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= iou_threshold:
            taken[best] = True
            records.append(MatchRecord(det.confidence, det.class_id, True, best, best_iou))
        else:
            records.append(MatchRecord(det.confidence, det.class_id, False, None, max(best_iou, 0.0)))
    n_gt: Dict[int, int] = {}
    for gt in gts:
        n_gt[gt.class_id] = n_gt.get(gt.class_id, 0) + 1
    return MatchOutcome(records, n_gt, taken.count(False))


@dataclass
class PRCurve:
    precision: List[float]
    recall: List[float]
    confidence: List[float]


def _pooled(outcomes: Sequence[MatchOutcome], class_id: Optional[int]):
    pooled = [r for o in outcomes for r in o.records if class_id is None or r.class_id == class_id]
    pooled.sort(key=lambda r: -r.confidence)  # stable: image order, then per-image order
    total = sum(o.total_gt if class_id is None else o.n_gt.get(class_id, 0) for o in outcomes)
    return pooled, total


def pr_curve(outcomes: Sequence[MatchOutcome], class_id: Optional[int] = None) -> PRCurve:
    pooled, total = _pooled(outcomes, class_id)
    if total == 0:
        raise UndefinedAPError("dataset has no ground-truth objects")
    tp = fp = 0
    curve = PRCurve([], [], [])
    for r in pooled:
        tp += r.tp
        fp += not r.tp
        curve.precision.append(tp / (tp + fp))
        curve.recall.append(tp / total)
        curve.confidence.append(r.confidence)
    return curve


def average_precision(outcomes: Sequence[MatchOutcome], class_id: Optional[int] = None) -> float:
    """All-point interpolated AP over detections pooled across images.

    Computed in exact rational arithmetic; the result is the correctly
    rounded float of the true area.
    """
    pooled, total = _pooled(outcomes, class_id)
    if total == 0:
        raise UndefinedAPError("dataset has no ground-truth objects")
    precisions = []
    tp = 0
    for k, r in enumerate(pooled, start=1):
        tp += r.tp
        precisions.append(Fraction(tp, k))
    # Only true positives raise recall, each by 1/total.
    area = Fraction(0)
    envelope = Fraction(0)
    for k in range(len(pooled) - 1, -1, -1):
        envelope = max(envelope, precisions[k])
        if pooled[k].tp:
            area += envelope
    return float(area / total)


def map_at_05(dataset: Sequence[Tuple[Sequence[GroundTruth], Sequence[Detection]]],
              iou_threshold: float = IOU_THRESHOLD) -> float:
    """Mean of per-class AP over classes with at least one ground truth."""
    outcomes = [match(g, d, iou_threshold) for g, d in dataset]
    classes = sorted({c for o in outcomes for c, n in o.n_gt.items() if n > 0})
    if not classes:
        raise UndefinedAPError("dataset has no ground-truth objects")
    return sum(average_precision(outcomes, c) for c in classes) / len(classes)


def aggregate(test_normal_ap: float, test_difficult_ap: float) -> Tuple[float, float]:
    for v in (test_normal_ap, test_difficult_ap):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"AP {v} outside [0, 1]")
    return (test_normal_ap + test_difficult_ap) / 2.0, abs(test_normal_ap - test_difficult_ap)


@dataclass
class EvalReport:
    model_id: str
    test_normal: float
    test_difficult: float
    validation: Optional[float] = None

    @property
    def test_average(self) -> float:
        return aggregate(self.test_normal, self.test_difficult)[0]

    @property
    def test_difference(self) -> float:
        return aggregate(self.test_normal, self.test_difficult)[1]

    def to_dict(self) -> dict:
        return {
            "model": self.model_id,
            "ap50": {"validation": self.validation, "test-normal": self.test_normal, "test-difficult": self.test_difficult},
            "test_average": self.test_average,
            "test_difference": self.test_difference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        ap = d["ap50"]
        if ap.get("test-normal") is None or ap.get("test-difficult") is None:
            raise DetbenchError(f"report for {d.get('model')!r} lacks test-normal/test-difficult AP")
        return cls(d["model"], ap["test-normal"], ap["test-difficult"], ap.get("validation"))


def select_model(reports: Sequence[EvalReport]) -> str:
    """Highest test average; near-ties (1e-6) go to the smaller difference, then input order."""
    if not reports:
        raise ValueError("no reports to select from")
    best = reports[0]
    for r in reports[1:]:
        if r.test_average > best.test_average + SELECTION_TOL:
            best = r
        elif abs(r.test_average - best.test_average) <= SELECTION_TOL and \
                r.test_difference < best.test_difference - SELECTION_TOL:
            best = r
    return best.model_id


def reports_table_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Model", "mAP@0.5 Validation", "mAP@0.5 Test-N", "mAP@0.5 Test-D", "mAP@0.5 Test Avg", "mAP@0.5 Test Diff"])
    for r in reports:
        val = "" if r.validation is None else f"{r.validation:.3f}"
        w.writerow([r.model_id, val, f"{r.test_normal:.3f}", f"{r.test_difficult:.3f}",
                    f"{r.test_average:.3f}", f"{r.test_difference:.3f}"])
    return buf.getvalue()


def load_pairs(gt_dir, det_dir) -> List[Tuple[str, List[GroundTruth], List[Detection]]]:
    """Pair ``<img>.txt`` ground truth with ``<img>.det.txt`` detections.

    An image with no detection file has no detections; a detection file with
    no ground-truth file counts as an image with no objects.
    """
    gt_dir, det_dir = Path(gt_dir), Path(det_dir)
    gts = {p.name[:-len(".txt")]: p for p in gt_dir.glob("*.txt") if not p.name.endswith(".det.txt")}
    dets = {p.name[:-len(".det.txt")]: p for p in det_dir.glob("*.det.txt")}
    pairs = []
    for stem in sorted(set(gts) | set(dets)):
        g = parse_label_file(gts[stem].read_text(encoding="utf-8")) if stem in gts else []
        d = parse_detection_file(dets[stem].read_text(encoding="utf-8")) if stem in dets else []
        pairs.append((stem, g, d))
    return pairs


def evaluate_dirs(gt_dir, det_dir, iou_threshold: float = IOU_THRESHOLD):
    """Return ``(ap, pr_curve)`` for one dataset directory pair."""
    pairs = load_pairs(gt_dir, det_dir)
    outcomes = [match(g, d, iou_threshold) for _, g, d in pairs]
    ap = map_at_05([(g, d) for _, g, d in pairs], iou_threshold)
    return ap, pr_curve(outcomes)
