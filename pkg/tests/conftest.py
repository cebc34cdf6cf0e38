"""Shared fixtures: synthetic annotated corpora with scan-like pages."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from scoreforge.corpus import AnnotatedCorpus, BBox, Detection
from scoreforge.imaging import save_image

PAPER_TONE = 210.0
STAFF_INK = 70.0
TEXT_INK = 85.0


def draw_staff(img: np.ndarray, x: int, y: int, w: int, h: int) -> None:
    spacing = max(2, (h - 8) // 4)
    for i in range(5):
        ly = y + 4 + i * spacing
        img[ly : ly + 2, x + 4 : x + w - 4] = STAFF_INK


def draw_text(img: np.ndarray, x: int, y: int, w: int, h: int, rng: np.random.Generator) -> None:
    for _ in range(max(6, w // 30)):
        cx = int(rng.integers(x + 4, x + w - 14))
        cy = int(rng.integers(y + 4, y + h - 8))
        img[cy : cy + 4, cx : cx + 10] = TEXT_INK


def _page_layout(width: int, height: int, rng: np.random.Generator) -> list[tuple[str, int, int, int, int]]:
    def jitter(v, lim):
        return int(v + rng.integers(-lim, lim + 1))

    staff_w = jitter(width * 0.85, 4)
    staff_h = jitter(height * 0.15, 2)
    text_w = jitter(width * 0.60, 4)
    text_h = jitter(height * 0.09, 2)
    return [
        ("staff", int(width * 0.05), int(height * 0.12), staff_w, staff_h),
        ("staff", int(width * 0.05), int(height * 0.38), staff_w, staff_h),
        ("text", int(width * 0.08), int(height * 0.64), text_w, text_h),
        ("text", int(width * 0.08), int(height * 0.80), text_w, text_h),
    ]


def build_fixture_corpus(
    out_dir: Path, n_pages: int = 4, width: int = 800, height: int = 600, seed: int = 9
) -> Path:
    """Write a small annotated corpus of scan-like pages; returns the annotation path."""
    rng = np.random.default_rng(seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    ann_id = 1
    for pid in range(1, n_pages + 1):
        img = np.full((height, width), PAPER_TONE)
        img += rng.normal(0.0, 2.0, img.shape)
        img += np.linspace(-4.0, 4.0, width)[None, :]
        for cls, x, y, w, h in _page_layout(width, height, rng):
            if cls == "staff":
                draw_staff(img, x, y, w, h)
            else:
                draw_text(img, x, y, w, h, rng)
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": pid,
                    "category_id": 1 if cls == "staff" else 2,
                    "bbox": [float(x), float(y), float(w), float(h)],
                }
            )
            ann_id += 1
        img = gaussian_filter(img, 1.2)
        name = f"page_{pid:03d}.png"
        save_image(np.clip(np.rint(img), 0, 255).astype(np.uint8), out_dir / name)
        images.append({"id": pid, "file_name": name, "width": width, "height": height})

    path = out_dir / "annotations.json"
    payload = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "staff"}, {"id": 2, "name": "text"}],
    }
    path.write_text(json.dumps(payload, indent=1), "utf-8")
    return path


def write_pages_only_corpus(path: Path, n_pages: int, width: int = 800, height: int = 600) -> Path:
    """Annotation file with pages but no regions (no image files on disk)."""
    payload = {
        "images": [
            {"id": i, "file_name": f"page_{i:03d}.png", "width": width, "height": height}
            for i in range(1, n_pages + 1)
        ],
        "annotations": [],
        "categories": [{"id": 1, "name": "staff"}, {"id": 2, "name": "text"}],
    }
    path.write_text(json.dumps(payload), "utf-8")
    return path


def perfect_detections(corpus: AnnotatedCorpus, confidence: float = 1.0) -> list[Detection]:
    return [
        Detection(p.id, r.class_name, r.bbox, confidence) for p in corpus.pages for r in p.regions
    ]


def jittered_detections(
    corpus: AnnotatedCorpus, rng: np.random.Generator, max_shift: float = 6.0
) -> list[Detection]:
    """Fake-detector output: ground truth with random shifts and confidences."""
    dets = []
    for page in corpus.pages:
        for r in page.regions:
            dx, dy = rng.uniform(-max_shift, max_shift, 2)
            sw, sh = rng.uniform(0.95, 1.05, 2)
            w = min(r.bbox.w * sw, page.width)
            h = min(r.bbox.h * sh, page.height)
            x = min(max(0.0, r.bbox.x + dx), page.width - w)
            y = min(max(0.0, r.bbox.y + dy), page.height - h)
            dets.append(
                Detection(page.id, r.class_name, BBox(x, y, w, h), float(rng.uniform(0.3, 1.0)))
            )
    return dets


@pytest.fixture(scope="session")
def fixture_corpus_path(tmp_path_factory) -> Path:
    """The 4-page 800x600 fixture corpus (session-wide, read-only)."""
    return build_fixture_corpus(tmp_path_factory.mktemp("fixture_corpus"))


@pytest.fixture(scope="session")
def small_corpus_path(tmp_path_factory) -> Path:
    """A quick 3-page 320x240 corpus for unit tests."""
    return build_fixture_corpus(
        tmp_path_factory.mktemp("small_corpus"), n_pages=3, width=320, height=240, seed=5
    )
