"""Semi-synthetic page generation.

Each synthetic page is built from a uniformly chosen source page: its
content is faded into a background estimate, and every source region is
replaced by a uniformly chosen same-class region from anywhere in the
corpus, anchored at the source region's upper-left corner. One rotation
angle is drawn per page and applied to every placed patch about its own
center; only the Sauvola-ink pixels of the (rotated) patch are written
onto the background. A candidate is rejected when its rotated hull would
overlap an already placed box or leave the page; after the retry budget is
exhausted the slot is skipped.

Generation is deterministic for a fixed (corpus, config): page i draws all
its randomness from a stream seeded with ``seed XOR i``, so results do not
depend on scheduling or thread count.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import AnnotatedCorpus, BBox, Page, Region, write_corpus
from .imaging import (
    BackgroundConfig,
    SauvolaParams,
    estimate_background,
    load_image,
    rotate_patch,
    rotated_hull_size,
    sauvola_binarize,
    save_image,
    to_grayscale,
    transfer_ink,
)

log = logging.getLogger("scoreforge.synthgen")


class GenerationError(RuntimeError):
    """Raised when a synthetic corpus cannot be generated as configured."""


@dataclass(frozen=True)
class GenConfig:
    """Generation settings; ``max_retries = 0`` means one candidate per slot."""

    n: int
    seed: int = 0
    rotation_range: float = 3.0
    max_retries: int = 10
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    binarization: SauvolaParams = field(default_factory=SauvolaParams)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.rotation_range < 0:
            raise ValueError(f"rotation_range must be >= 0, got {self.rotation_range}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class SlotOutcome:
    """What happened to one source-region slot; chosen_region_id is None when skipped."""

    slot_region_id: int
    chosen_region_id: int | None
    attempts: int


@dataclass
class SyntheticPage:
    image: np.ndarray
    regions: list[Region]
    source_page_id: int
    angle_deg: float
    slots: list[SlotOutcome]

    @property
    def skipped(self) -> int:
        return sum(1 for s in self.slots if s.chosen_region_id is None)


def _crop_rect(bbox: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer crop window (x0, y0, x1, y1) of a box, clipped to the raster."""
    x0 = max(0, int(round(bbox.x)))
    y0 = max(0, int(round(bbox.y)))
    x1 = min(width, max(x0 + 1, int(round(bbox.right))))
    y1 = min(height, max(y0 + 1, int(round(bbox.bottom))))
    return x0, y0, x1, y1


def _overlaps_any(x: int, y: int, w: int, h: int, placed: list[tuple[int, int, int, int]]) -> bool:
    for px, py, pw, ph in placed:
        if min(x + w, px + pw) > max(x, px) and min(y + h, py + ph) > max(y, py):
            return True
    return False


class _SourceCache:
    """Lazily loaded grayscale pages and their background estimates."""

    def __init__(self, corpus: AnnotatedCorpus, background: BackgroundConfig):
        self._corpus = corpus
        self._background = background
        self._gray: dict[int, np.ndarray] = {}
        self._bg: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def gray(self, page: Page) -> np.ndarray:
        with self._lock:
            if page.id not in self._gray:
                self._gray[page.id] = to_grayscale(load_image(self._corpus.image_path(page)))
            return self._gray[page.id]

    def background(self, page: Page) -> np.ndarray:
        gray = self.gray(page)
        with self._lock:
            if page.id not in self._bg:
                self._bg[page.id] = estimate_background(gray, self._background)
            return self._bg[page.id]


@dataclass
class _PageState:
    image: np.ndarray
    width: int
    height: int
    placed: list[tuple[int, int, int, int]] = field(default_factory=list)


def place_region(
    state: _PageState,
    slot: Region,
    pool: list[Region],
    angle_deg: float,
    rng: np.random.Generator,
    cache: _SourceCache,
    pages_by_id: dict[int, Page],
    cfg: GenConfig,
) -> tuple[Region | None, SlotOutcome]:
    """Try candidates for one slot; transfer ink on success.

    A candidate is accepted iff its rotated hull, anchored so the candidate
    box's upper-left corner lands on the slot's upper-left corner before
    rotation about its own center, stays fully inside the page and has
    zero-area intersection with every already placed box. Up to
    ``cfg.max_retries`` further candidates are tried after the first
    failure; then the slot is skipped.
    """
    if not pool:
        raise GenerationError(f"no candidate regions of class {slot.class_name!r} in the corpus")

    attempts = 0
    for _ in range(cfg.max_retries + 1):
        attempts += 1
        cand = pool[int(rng.integers(len(pool)))]
        donor = pages_by_id[cand.page_id]
        x0, y0, x1, y1 = _crop_rect(cand.bbox, donor.width, donor.height)
        pw, ph = x1 - x0, y1 - y0
        hull_w, hull_h = rotated_hull_size(pw, ph, angle_deg)
        # rotation about the patch center keeps the center fixed in page coords
        ox = int(round(slot.bbox.x + (pw - hull_w) / 2.0))
        oy = int(round(slot.bbox.y + (ph - hull_h) / 2.0))

        if ox < 0 or oy < 0 or ox + hull_w > state.width or oy + hull_h > state.height:
            continue
        if _overlaps_any(ox, oy, hull_w, hull_h, state.placed):
            continue

        patch = cache.gray(donor)[y0:y1, x0:x1]
        rotated, _ = rotate_patch(patch, angle_deg)
        mask = sauvola_binarize(rotated, cfg.binarization.window, cfg.binarization.k, cfg.binarization.r)
        transfer_ink(state.image, rotated, mask, ox, oy)
        state.placed.append((ox, oy, hull_w, hull_h))

        region = Region(
            id=slot.id,
            page_id=slot.page_id,
            class_name=slot.class_name,
            bbox=BBox(float(ox), float(oy), float(hull_w), float(hull_h)),
        )
        return region, SlotOutcome(slot.id, cand.id, attempts)

    return None, SlotOutcome(slot.id, None, attempts)


def _build_page(
    index: int,
    corpus: AnnotatedCorpus,
    cfg: GenConfig,
    cache: _SourceCache,
    pools: dict[str, list[Region]],
) -> SyntheticPage:
    rng = np.random.default_rng(cfg.seed ^ index)
    source = corpus.pages[int(rng.integers(len(corpus.pages)))]
    angle = float(rng.uniform(-cfg.rotation_range, cfg.rotation_range))

    state = _PageState(
        image=cache.background(source).copy(),
        width=source.width,
        height=source.height,
    )
    pages_by_id = corpus.pages_by_id
    regions: list[Region] = []
    slots: list[SlotOutcome] = []
    for slot_index, slot in enumerate(source.regions):
        placed, outcome = place_region(
            state, slot, pools[slot.class_name], angle, rng, cache, pages_by_id, cfg
        )
        slots.append(outcome)
        if placed is not None:
            regions.append(
                Region(id=slot_index, page_id=index, class_name=placed.class_name, bbox=placed.bbox)
            )
    return SyntheticPage(
        image=state.image,
        regions=regions,
        source_page_id=source.id,
        angle_deg=angle,
        slots=slots,
    )


def generate(corpus: AnnotatedCorpus, cfg: GenConfig, threads: int = 1) -> list[SyntheticPage]:
    """Build ``cfg.n`` synthetic pages from an annotated corpus.

    Deterministic for a fixed (corpus, cfg) under any thread count. Region
    ids on the returned pages are slot indexes within their page;
    ``write_synthetic_corpus`` reassigns corpus-unique ids on write.
    """
    if cfg.n == 0:
        return []
    if not corpus.pages:
        raise GenerationError("corpus has no pages")

    pools: dict[str, list[Region]] = {}
    for region in corpus.regions():
        pools.setdefault(region.class_name, []).append(region)

    cache = _SourceCache(corpus, cfg.background)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pages = list(pool.map(lambda i: _build_page(i, corpus, cfg, cache, pools), range(cfg.n)))
    else:
        pages = [_build_page(i, corpus, cfg, cache, pools) for i in range(cfg.n)]

    skipped = sum(p.skipped for p in pages)
    if skipped:
        log.info("generation skipped %d slot(s) across %d pages", skipped, cfg.n)
    return pages


def write_synthetic_corpus(pages: list[SyntheticPage], out_dir: str | Path) -> AnnotatedCorpus:
    """Write PNGs, a COCO-subset annotation file, and a provenance sidecar.

    Layout: ``<out_dir>/images/synth_<i>.png``, ``<out_dir>/annotations.json``,
    ``<out_dir>/provenance.json``. Returns the corpus that was written.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    class_names = sorted({r.class_name for p in pages for r in p.regions})
    categories = {i + 1: name for i, name in enumerate(class_names)}

    corpus_pages = []
    next_region_id = 1
    provenance = []
    for i, page in enumerate(pages):
        file_name = f"images/synth_{i:04d}.png"
        save_image(page.image, out_dir / file_name)
        h, w = page.image.shape
        regions = []
        for r in page.regions:
            regions.append(Region(id=next_region_id, page_id=i, class_name=r.class_name, bbox=r.bbox))
            next_region_id += 1
        corpus_pages.append(Page(id=i, file_name=file_name, width=w, height=h, regions=regions))
        provenance.append(
            {
                "synthetic_page_id": i,
                "source_page_id": page.source_page_id,
                "angle_deg": page.angle_deg,
                "slots": [
                    {
                        "slot_region_id": s.slot_region_id,
                        "chosen_region_id": "skipped" if s.chosen_region_id is None else s.chosen_region_id,
                    }
                    for s in page.slots
                ],
            }
        )

    corpus = AnnotatedCorpus(pages=corpus_pages, categories=categories, root=out_dir)
    write_corpus(corpus, out_dir / "annotations.json")
    (out_dir / "provenance.json").write_text(json.dumps(provenance, indent=1) + "\n", "utf-8")
    return corpus
