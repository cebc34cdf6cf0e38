"""Annotated corpus loading, validation, splitting, and detection file I/O.

The on-disk annotation format is a COCO-subset JSON object with three arrays:

    images:      [{"id", "file_name", "width", "height"}]
    annotations: [{"id", "image_id", "category_id", "bbox": [x, y, w, h]}]
    categories:  [{"id", "name"}]

Detections use the COCO results layout: a JSON array of
``{"image_id", "category_id", "bbox": [x, y, w, h], "score"}`` records.

All box coordinates are pixel floats with a top-left origin, x rightward
and y downward.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger("scoreforge.corpus")

# Largest train-subset size of the power-of-two ladder.
MAX_TRAIN_PAGES = 64


class CorpusError(ValueError):
    """Raised for malformed, inconsistent, or out-of-range corpus data."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in page pixel coordinates (x, y = top-left)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise CorpusError(f"bbox {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise CorpusError(f"bbox sides must be positive, got w={self.w}, h={self.h}")

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Region:
    """A class-labeled ground-truth bounding box belonging to one page."""

    id: int
    page_id: int
    class_name: str
    bbox: BBox


@dataclass
class Page:
    id: int
    file_name: str
    width: int
    height: int
    regions: list[Region] = field(default_factory=list)


@dataclass(frozen=True)
class Detection:
    """One model prediction: a class-labeled box with a confidence in [0, 1]."""

    page_id: int
    class_name: str
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise CorpusError(f"confidence outside [0, 1]: {self.confidence!r}")


@dataclass
class AnnotatedCorpus:
    """A set of annotated pages plus the category table they reference.

    ``root`` is the directory page image paths are resolved against; it is
    excluded from equality so that a written-then-reloaded corpus compares
    equal to the original.
    """

    pages: list[Page]
    categories: dict[int, str]
    root: Path = field(default_factory=Path, compare=False)

    @property
    def pages_by_id(self) -> dict[int, Page]:
        return {p.id: p for p in self.pages}

    def regions(self) -> list[Region]:
        """All regions in page order."""
        return [r for p in self.pages for r in p.regions]

    def class_names(self) -> list[str]:
        return [self.categories[k] for k in sorted(self.categories)]

    def image_path(self, page: Page) -> Path:
        return self.root / page.file_name


@dataclass
class SplitPlan:
    """Nested power-of-two train subsets plus validation/test partitions."""

    train_subsets: dict[int, list[int]]
    validation: list[int]
    test: list[int]
    seed: int

    @property
    def max_train_size(self) -> int:
        return max(self.train_subsets)


@dataclass(frozen=True)
class Finding:
    kind: str  # out_of_bounds | duplicate_id | unknown_class
    message: str
    page_id: int | None = None
    region_id: int | None = None


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.findings

    def __bool__(self) -> bool:  # truthy when there is something to report
        return bool(self.findings)


def load_corpus(path: str | Path, validate: bool = True) -> AnnotatedCorpus:
    """Load and fully validate a COCO-subset annotation file.

    Args:
        path: annotation JSON file; page images are resolved relative to
            its parent directory.
        validate: when True (default), reject corpora with any validation
            finding; pass False to obtain the corpus for inspection with
            ``validate_corpus``.

    Returns:
        A validated corpus.

    Raises:
        CorpusError: malformed JSON, missing page/category references,
            non-positive box sides, or (with ``validate``) any validation
            finding (out-of-bounds boxes are rejected, not clipped).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot parse {path}: {exc}") from exc

    if not isinstance(raw, dict):
        raise CorpusError(f"{path}: top-level value must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(raw.get(key), list):
            raise CorpusError(f"{path}: missing or non-array {key!r} field")

    categories: dict[int, str] = {}
    for cat in raw["categories"]:
        cid = int(cat["id"])
        if cid in categories:
            raise CorpusError(f"duplicate category id {cid}")
        categories[cid] = str(cat["name"])

    pages: dict[int, Page] = {}
    page_order = []
    for im in raw["images"]:
        pid = int(im["id"])
        width, height = int(im["width"]), int(im["height"])
        if width <= 0 or height <= 0:
            raise CorpusError(f"page {pid}: non-positive dimensions {width}x{height}")
        page = Page(id=pid, file_name=str(im["file_name"]), width=width, height=height)
        if pid in pages:
            raise CorpusError(f"duplicate page id {pid}")
        pages[pid] = page
        page_order.append(page)

    for ann in raw["annotations"]:
        rid = int(ann["id"])
        pid = int(ann["image_id"])
        cid = int(ann["category_id"])
        if pid not in pages:
            raise CorpusError(f"annotation {rid} references missing page {pid}")
        if cid not in categories:
            raise CorpusError(f"annotation {rid} references missing category {cid}")
        x, y, w, h = (float(v) for v in ann["bbox"])
        region = Region(id=rid, page_id=pid, class_name=categories[cid], bbox=BBox(x, y, w, h))
        pages[pid].regions.append(region)

    corpus = AnnotatedCorpus(pages=page_order, categories=categories, root=path.parent)
    if validate:
        report = validate_corpus(corpus)
        if not report.is_valid:
            lines = "; ".join(f.message for f in report.findings[:5])
            raise CorpusError(f"{path}: {len(report.findings)} validation finding(s): {lines}")
    return corpus


def validate_corpus(corpus: AnnotatedCorpus) -> ValidationReport:
    """Check box bounds, id uniqueness, and class membership.

    An empty report means the corpus satisfies all structural invariants.
    """
    findings: list[Finding] = []
    known = set(corpus.categories.values())

    seen_pages: set[int] = set()
    for page in corpus.pages:
        if page.id in seen_pages:
            findings.append(Finding("duplicate_id", f"duplicate page id {page.id}", page_id=page.id))
        seen_pages.add(page.id)

    seen_regions: set[int] = set()
    for page in corpus.pages:
        for r in page.regions:
            if r.id in seen_regions:
                findings.append(
                    Finding("duplicate_id", f"duplicate region id {r.id}", page_id=page.id, region_id=r.id)
                )
            seen_regions.add(r.id)
            if r.class_name not in known:
                findings.append(
                    Finding(
                        "unknown_class",
                        f"region {r.id} has class {r.class_name!r} not in the category table",
                        page_id=page.id,
                        region_id=r.id,
                    )
                )
            b = r.bbox
            if b.x < 0 or b.y < 0 or b.right > page.width or b.bottom > page.height:
                findings.append(
                    Finding(
                        "out_of_bounds",
                        f"region {r.id} box [{b.x}, {b.y}, {b.w}, {b.h}] exceeds "
                        f"page {page.id} bounds {page.width}x{page.height}",
                        page_id=page.id,
                        region_id=r.id,
                    )
                )
    return ValidationReport(findings)


def make_splits(corpus: AnnotatedCorpus, seed: int) -> SplitPlan:
    """Partition page ids into nested train subsets, validation, and test.

    The train ladder holds subsets of sizes 1, 2, 4, ... up to 64 (or the
    largest power of two the corpus can support while leaving at least one
    validation and one test page), nested so that each subset is a prefix
    of the next. Remaining pages are split evenly between validation and
    test; when the remainder is odd, validation receives the extra page.
    Deterministic for a fixed (corpus, seed).
    """
    n = len(corpus.pages)
    if n < 3:
        raise CorpusError(f"cannot split a corpus of {n} page(s); need at least 3")

    ladder_max = 1
    while ladder_max * 2 <= min(MAX_TRAIN_PAGES, n - 2):
        ladder_max *= 2
    if n < MAX_TRAIN_PAGES + 2:
        log.warning(
            "corpus has %d pages; train ladder capped at %d (need %d for the full ladder)",
            n, ladder_max, MAX_TRAIN_PAGES + 2,
        )

    ids = sorted(p.id for p in corpus.pages)
    shuffled = random.Random(seed).sample(ids, n)

    train_subsets: dict[int, list[int]] = {}
    k = 1
    while k <= ladder_max:
        train_subsets[k] = shuffled[:k]
        k *= 2

    rest = shuffled[ladder_max:]
    n_val = (len(rest) + 1) // 2
    return SplitPlan(
        train_subsets=train_subsets,
        validation=rest[:n_val],
        test=rest[n_val:],
        seed=seed,
    )


def _category_ids_by_name(categories: dict[int, str]) -> dict[str, int]:
    return {name: cid for cid, name in categories.items()}


def write_detections(dets: list[Detection], path: str | Path, categories: dict[int, str]) -> None:
    """Write detections as a COCO results array; coordinates round-trip bit-exact."""
    by_name = _category_ids_by_name(categories)
    records = []
    for d in dets:
        if d.class_name not in by_name:
            raise CorpusError(f"detection class {d.class_name!r} not in the category table")
        records.append(
            {
                "image_id": d.page_id,
                "category_id": by_name[d.class_name],
                "bbox": d.bbox.to_list(),
                "score": d.confidence,
            }
        )
    Path(path).write_text(json.dumps(records, indent=1) + "\n", "utf-8")


def read_detections(path: str | Path, categories: dict[int, str]) -> list[Detection]:
    """Read a COCO results array; rejects scores outside [0, 1]."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise CorpusError(f"{path}: detections file must hold a JSON array")

    dets = []
    for i, rec in enumerate(raw):
        cid = int(rec["category_id"])
        if cid not in categories:
            raise CorpusError(f"{path}: record {i} references missing category {cid}")
        x, y, w, h = (float(v) for v in rec["bbox"])
        dets.append(
            Detection(
                page_id=int(rec["image_id"]),
                class_name=categories[cid],
                bbox=BBox(x, y, w, h),
                confidence=float(rec["score"]),
            )
        )
    return dets


def write_corpus(corpus: AnnotatedCorpus, path: str | Path) -> None:
    """Write the COCO-subset annotation file for ``corpus``."""
    payload = {
        "images": [
            {"id": p.id, "file_name": p.file_name, "width": p.width, "height": p.height}
            for p in corpus.pages
        ],
        "annotations": [
            {
                "id": r.id,
                "image_id": r.page_id,
                "category_id": _category_ids_by_name(corpus.categories)[r.class_name],
                "bbox": r.bbox.to_list(),
            }
            for p in corpus.pages
            for r in p.regions
        ],
        "categories": [{"id": cid, "name": name} for cid, name in sorted(corpus.categories.items())],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", "utf-8")
