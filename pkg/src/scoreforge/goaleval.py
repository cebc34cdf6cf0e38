"""Goal-directed evaluation: symbol error rate, staff matching above an IoU
floor, and transcription-impact tuples.

The symbol error rate (SER) is the token-level edit distance between a
hypothesis and a reference divided by the reference length. For each
(detection, ground truth) pair above the IoU floor, the impact of the
layout stage is ``ser_delta = SER(hyp from detected box) - SER(hyp from
ground-truth box)``: zero means the detected region transcribes exactly as
well as the annotated one, positive values mean a loss, negative values
mean the detected region transcribed better.

Transcription files are UTF-8 text with one record per line:
``<region_id>\\t<token> <token> ...``. Detections are keyed by their
0-based index in the detections file.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Detection, Region
from .metrics import iou

DEFAULT_IOU_MIN = 0.55
DEFAULT_CONF_THR = 0.6


@dataclass(frozen=True)
class SymbolSequence:
    """An ordered token sequence attached to a region id."""

    region_id: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        for t in self.tokens:
            if not t or any(ch.isspace() for ch in t):
                raise ValueError(f"token {t!r} is empty or contains whitespace")


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Token-level Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, 1):
        cur = [i]
        for j, tb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


def ser(hyp: Sequence[str], ref: Sequence[str]) -> float:
    """Symbol error rate: edit_distance(hyp, ref) / len(ref)."""
    if len(ref) == 0:
        raise ValueError("reference sequence must be non-empty")
    return edit_distance(hyp, ref) / len(ref)


@dataclass(frozen=True)
class GoalPair:
    det_id: int  # index of the detection in its input list
    detection: Detection
    region: Region
    iou: float


def match_goal(
    dets: list[Detection],
    gts: list[Region],
    iou_min: float = DEFAULT_IOU_MIN,
    det_ids: Sequence[int] | None = None,
) -> list[GoalPair]:
    """All (detection, ground truth) pairs on the same page with IoU strictly above ``iou_min``.

    No uniqueness is imposed: one detection may pair with several ground
    truths and vice versa. ``det_ids`` overrides the default 0-based ids,
    for callers that pre-filter detections but key transcriptions by the
    position in the original file.
    """
    if det_ids is None:
        det_ids = range(len(dets))
    elif len(det_ids) != len(dets):
        raise ValueError("det_ids must parallel dets")
    pairs = []
    for det_id, det in zip(det_ids, dets):
        for gt in gts:
            if gt.page_id != det.page_id:
                continue
            v = iou(det.bbox, gt.bbox)
            if v > iou_min:
                pairs.append(GoalPair(det_id=det_id, detection=det, region=gt, iou=v))
    return pairs


@dataclass(frozen=True)
class GoalTuple:
    ser_delta: float
    confidence: float
    iou: float
    det_region_id: int
    gt_region_id: int


def ser_delta(
    pair: GoalPair,
    hyp_det: SymbolSequence,
    hyp_gt: SymbolSequence,
    ref: SymbolSequence,
) -> GoalTuple:
    """Transcription impact of one matched pair.

    ``ser_delta = ser(hyp_det, ref) - ser(hyp_gt, ref)``: positive whenever
    the detected region transcribes worse than the annotated one.
    """
    delta = ser(hyp_det.tokens, ref.tokens) - ser(hyp_gt.tokens, ref.tokens)
    return GoalTuple(
        ser_delta=delta,
        confidence=pair.detection.confidence,
        iou=pair.iou,
        det_region_id=pair.det_id,
        gt_region_id=pair.region.id,
    )


def goal_tuples(
    pairs: list[GoalPair],
    ref: dict[int, SymbolSequence],
    hyp_gt: dict[int, SymbolSequence],
    hyp_det: dict[int, SymbolSequence],
) -> tuple[list[GoalTuple], list[str]]:
    """ser_delta for every pair with complete transcriptions.

    Pairs whose region id or detection id is missing from any of the three
    transcription maps are skipped; one warning line per skip is returned
    alongside the tuples.
    """
    tuples, warnings = [], []
    for pair in pairs:
        gid, did = pair.region.id, pair.det_id
        missing = [
            name
            for name, table, key in (
                ("ref", ref, gid),
                ("hyp_gt", hyp_gt, gid),
                ("hyp_det", hyp_det, did),
            )
            if key not in table
        ]
        if missing:
            warnings.append(
                f"pair (det {did}, gt {gid}) skipped: missing {', '.join(missing)} transcription"
            )
            continue
        tuples.append(ser_delta(pair, hyp_det[did], hyp_gt[gid], ref[gid]))
    return tuples, warnings


@dataclass(frozen=True)
class Bucket:
    count: int
    mean: float | None
    median: float | None


@dataclass
class GoalSummary:
    conf_thr: float
    above: Bucket
    below: Bucket
    tuples: list[GoalTuple]


def _bucket(values: list[float]) -> Bucket:
    if not values:
        return Bucket(0, None, None)
    return Bucket(len(values), statistics.fmean(values), statistics.median(values))


def summarize(tuples: list[GoalTuple], conf_thr: float = DEFAULT_CONF_THR) -> GoalSummary:
    """Count/mean/median of ser_delta above and below the confidence threshold."""
    above = [t.ser_delta for t in tuples if t.confidence >= conf_thr]
    below = [t.ser_delta for t in tuples if t.confidence < conf_thr]
    return GoalSummary(conf_thr=conf_thr, above=_bucket(above), below=_bucket(below), tuples=list(tuples))


def read_transcriptions(path: str | Path) -> dict[int, SymbolSequence]:
    """Parse ``<region_id>\\t<token> <token> ...`` lines; blank lines are skipped."""
    table: dict[int, SymbolSequence] = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        head, _, rest = line.partition("\t")
        try:
            rid = int(head)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad region id {head!r}") from exc
        if rid in table:
            raise ValueError(f"{path}:{lineno}: duplicate region id {rid}")
        table[rid] = SymbolSequence(region_id=rid, tokens=tuple(rest.split()))
    return table


def write_transcriptions(table: dict[int, SymbolSequence], path: str | Path) -> None:
    lines = [f"{rid}\t{' '.join(seq.tokens)}" for rid, seq in sorted(table.items())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
