"""Detection evaluation: IoU, greedy matching, per-class and macro P/R/F1,
COCO-style average precision, and the confidence x IoU threshold sweep.

Matching follows the COCO convention: detections are processed per class in
descending confidence (ties broken by input order) and each claims the
unmatched same-class, same-page ground truth with the highest IoU at or
above the IoU threshold. Macro averages run over the classes that have any
ground truth or any kept detection; a class with neither is excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BBox, Detection, Region

# 10 IoU thresholds 0.50 .. 0.95, step 0.05 (COCO grid).
COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
# Sweep grids: confidence 0.05 .. 0.95 step 0.1, IoU 0.50 .. 0.95 step 0.05.
SWEEP_CONF_GRID: tuple[float, ...] = tuple(round(0.05 + 0.10 * i, 2) for i in range(10))
SWEEP_IOU_GRID: tuple[float, ...] = COCO_IOU_THRESHOLDS

_RECALL_POINTS = np.arange(101) / 100.0


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    iw = min(a.right, b.right) - max(a.x, b.x)
    ih = min(a.bottom, b.bottom) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class ClassMatch:
    """Match outcome for one class."""

    pairs: list[tuple[Detection, Region, float]] = field(default_factory=list)
    false_positives: list[Detection] = field(default_factory=list)
    false_negatives: list[Region] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


@dataclass
class MatchResult:
    per_class: dict[str, ClassMatch]
    conf_thr: float
    iou_thr: float


def _greedy_match(
    dets_sorted: list[Detection], gts: list[Region], iou_thr: float
) -> tuple[list[tuple[Detection, Region, float]], list[Detection], list[Region]]:
    """Greedy one-to-one matching for a single class.

    ``dets_sorted`` must already be in descending-confidence order.
    """
    gts_by_page: dict[int, list[Region]] = {}
    for g in gts:
        gts_by_page.setdefault(g.page_id, []).append(g)
    claimed: set[int] = set()

    pairs = []
    false_positives = []
    for det in dets_sorted:
        best, best_iou = None, 0.0
        for g in gts_by_page.get(det.page_id, ()):
            if id(g) in claimed:
                continue
            v = iou(det.bbox, g.bbox)
            if v >= iou_thr and v > best_iou:
                best, best_iou = g, v
        if best is None:
            false_positives.append(det)
        else:
            claimed.add(id(best))
            pairs.append((det, best, best_iou))
    false_negatives = [g for g in gts if id(g) not in claimed]
    return pairs, false_positives, false_negatives


def match_detections(
    dets: list[Detection], gts: list[Region], conf_thr: float, iou_thr: float
) -> MatchResult:
    """Match detections to ground truths at the given thresholds.

    Detections below ``conf_thr`` are discarded before matching. Per class,
    TP + FN equals the ground-truth count and TP + FP the kept-detection
    count.
    """
    kept = [d for d in dets if d.confidence >= conf_thr]
    classes = sorted({g.class_name for g in gts} | {d.class_name for d in kept})

    per_class: dict[str, ClassMatch] = {}
    for cls in classes:
        cls_dets = sorted(
            (d for d in kept if d.class_name == cls), key=lambda d: -d.confidence
        )
        cls_gts = [g for g in gts if g.class_name == cls]
        pairs, fps, fns = _greedy_match(cls_dets, cls_gts, iou_thr)
        per_class[cls] = ClassMatch(pairs, fps, fns)
    return MatchResult(per_class=per_class, conf_thr=conf_thr, iou_thr=iou_thr)


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float


@dataclass
class PrfReport:
    per_class: dict[str, Prf]
    macro: Prf


def _prf_from_counts(tp: int, fp: int, fn: int) -> Prf:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return Prf(p, r, f1)


def prf(match: MatchResult) -> PrfReport:
    """Per-class precision/recall/F1 plus their unweighted macro averages.

    Macro-F1 is the mean of per-class F1 values, not the harmonic mean of
    the macro precision and recall.
    """
    per_class = {
        cls: _prf_from_counts(m.tp, m.fp, m.fn) for cls, m in match.per_class.items()
    }
    if per_class:
        vals = list(per_class.values())
        macro = Prf(
            sum(v.precision for v in vals) / len(vals),
            sum(v.recall for v in vals) / len(vals),
            sum(v.f1 for v in vals) / len(vals),
        )
    else:
        macro = Prf(0.0, 0.0, 0.0)
    return PrfReport(per_class=per_class, macro=macro)


def average_precision(
    dets: list[Detection], gts: list[Region], class_name: str, iou_thr: float
) -> float:
    """COCO-style 101-point interpolated average precision for one class.

    Detections are ranked by descending confidence and matched greedily at
    ``iou_thr``; the precision envelope is made monotone non-increasing and
    sampled at recalls 0.00, 0.01, ..., 1.00.
    """
    cls_gts = [g for g in gts if g.class_name == class_name]
    cls_dets = sorted(
        (d for d in dets if d.class_name == class_name), key=lambda d: -d.confidence
    )
    n_gt = len(cls_gts)
    if n_gt == 0 or not cls_dets:
        return 0.0

    pairs, _, _ = _greedy_match(cls_dets, cls_gts, iou_thr)
    matched = {id(d) for d, _, _ in pairs}
    tp = np.array([id(d) in matched for d in cls_dets], dtype=np.float64)
    ctp = np.cumsum(tp)
    recalls = ctp / n_gt
    precisions = ctp / np.arange(1, len(cls_dets) + 1)

    envelope = precisions.copy()
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])

    idx = np.searchsorted(recalls, _RECALL_POINTS, side="left")
    interp = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(interp.mean())


def ap_table(
    dets: list[Detection], gts: list[Region], thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
) -> dict[str, dict[float, float]]:
    """AP per ground-truth class per IoU threshold."""
    classes = sorted({g.class_name for g in gts})
    return {
        cls: {thr: average_precision(dets, gts, cls, thr) for thr in thresholds}
        for cls in classes
    }


def coco_map(dets: list[Detection], gts: list[Region]) -> float:
    """Mean AP over the classes present in the ground truth and the 10-threshold COCO grid."""
    table = ap_table(dets, gts)
    if not table:
        return 0.0
    values = [ap for by_thr in table.values() for ap in by_thr.values()]
    return float(sum(values) / len(values))


@dataclass(frozen=True)
class SweepCell:
    conf_thr: float
    iou_thr: float
    macro_p: float
    macro_r: float
    macro_f1: float


@dataclass
class SweepResult:
    best_conf: float
    best_iou: float
    best_f1: float
    grid: list[SweepCell]


def sweep_thresholds(dets: list[Detection], gts: list[Region]) -> SweepResult:
    """Evaluate macro-F1 over the full confidence x IoU grid.

    Returns the argmax cell (ties resolved toward the lowest confidence
    threshold, then the lowest IoU threshold) and the complete grid for
    reporting; the winner is meant to be applied to the test split.
    """
    grid: list[SweepCell] = []
    best: SweepCell | None = None
    for conf_thr in SWEEP_CONF_GRID:
        for iou_thr in SWEEP_IOU_GRID:
            report = prf(match_detections(dets, gts, conf_thr, iou_thr))
            cell = SweepCell(
                conf_thr, iou_thr, report.macro.precision, report.macro.recall, report.macro.f1
            )
            grid.append(cell)
            if best is None or cell.macro_f1 > best.macro_f1:
                best = cell
    assert best is not None
    return SweepResult(best_conf=best.conf_thr, best_iou=best.iou_thr, best_f1=best.macro_f1, grid=grid)


@dataclass
class EvalReport:
    """Full metric battery for one detections/ground-truth pairing."""

    per_class: dict[str, Prf]
    macro: Prf
    ap: dict[str, dict[float, float]]
    mean_ap: float
    sweep: SweepResult | None
    conf_thr: float
    iou_thr: float


def evaluate(
    dets: list[Detection],
    gts: list[Region],
    conf_thr: float = 0.5,
    iou_thr: float = 0.5,
    with_sweep: bool = True,
) -> EvalReport:
    """P/R/F1 at the given thresholds plus mAP and (optionally) the sweep."""
    report = prf(match_detections(dets, gts, conf_thr, iou_thr))
    return EvalReport(
        per_class=report.per_class,
        macro=report.macro,
        ap=ap_table(dets, gts),
        mean_ap=coco_map(dets, gts),
        sweep=sweep_thresholds(dets, gts) if with_sweep else None,
        conf_thr=conf_thr,
        iou_thr=iou_thr,
    )
