"""Pixel-classifier pre/post-processing: vertical ground-truth shrink, its
inverse expansion for predictions, and probability-map to bounding-box
extraction via connected components.

Probability maps are float arrays in [0, 1], one map per page per class,
stored as 8-bit grayscale PNGs with probability = value / 255 and named
``<page_id>.<class>.png``.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from .corpus import BBox, Detection, Region
from .imaging import connected_components, load_image, save_image


def shrink_gt_vertical(region: Region, ratio: float = 0.2) -> Region:
    """Scale a region's height by (1 - ratio), symmetric about its vertical center.

    x and w are unchanged; y moves down by ratio * h / 2.
    """
    _check_ratio(ratio)
    b = region.bbox
    new_h = b.h * (1.0 - ratio)
    if new_h < 1.0:
        raise ValueError(f"shrinking region {region.id} by {ratio} leaves height {new_h} < 1 px")
    return replace(region, bbox=BBox(b.x, b.y + ratio * b.h / 2.0, b.w, new_h))


def expand_pred_vertical(
    det: Detection, ratio: float = 0.2, page_width: float = float("inf"), page_height: float = float("inf")
) -> Detection:
    """Exact inverse of the vertical shrink, clipped to the page bounds.

    For boxes whose expansion stays in bounds, expand(shrink(b)) == b.
    """
    _check_ratio(ratio)
    b = det.bbox
    new_h = b.h / (1.0 - ratio)
    top = b.y - (new_h - b.h) / 2.0
    bottom = min(top + new_h, page_height)
    top = max(top, 0.0)
    left = max(b.x, 0.0)
    right = min(b.right, page_width)
    if bottom - top <= 0 or right - left <= 0:
        raise ValueError("expansion clipped to a degenerate box")
    return replace(det, bbox=BBox(left, top, right - left, bottom - top))


def _check_ratio(ratio: float) -> None:
    if not (0.0 <= ratio < 1.0):
        raise ValueError(f"ratio must lie in [0, 1), got {ratio}")


def probmap_to_boxes(
    probmap: np.ndarray,
    page_id: int,
    class_name: str,
    prob_thr: float = 0.5,
    min_area_frac: float = 0.001,
    connectivity: int = 8,
) -> list[Detection]:
    """Convert a per-class probability map into detections.

    The map is thresholded at ``prob_thr``, connected components are
    extracted, and components smaller than ``min_area_frac`` of the page
    area are discarded. Each surviving component yields a detection whose
    box is the component hull and whose confidence is the mean probability
    over the component's pixels.
    """
    probmap = np.asarray(probmap, dtype=np.float64)
    if probmap.ndim != 2 or probmap.size == 0:
        raise ValueError(f"expected a non-empty (h, w) probability map, got shape {probmap.shape}")
    if probmap.min() < 0.0 or probmap.max() > 1.0:
        raise ValueError("probability map values must lie in [0, 1]")

    min_area = min_area_frac * probmap.shape[0] * probmap.shape[1]
    dets = []
    for comp in connected_components(probmap >= prob_thr, connectivity):
        if comp.area < min_area:
            continue
        conf = float(probmap[comp.pixels[:, 1], comp.pixels[:, 0]].mean())
        dets.append(Detection(page_id=page_id, class_name=class_name, bbox=comp.bbox, confidence=conf))
    return dets


def probmap_filename(page_id: int, class_name: str) -> str:
    return f"{page_id}.{class_name}.png"


def parse_probmap_filename(name: str) -> tuple[int, str]:
    """Split ``<page_id>.<class>.png`` into its page id and class name."""
    stem = name[: -len(".png")] if name.endswith(".png") else name
    page_str, _, class_name = stem.partition(".")
    if not page_str.isdigit() or not class_name:
        raise ValueError(f"probability map name {name!r} is not <page_id>.<class>.png")
    return int(page_str), class_name


def read_probmap(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG as probabilities (value / 255)."""
    img = load_image(path)
    if img.ndim != 2:
        raise ValueError(f"{path}: probability maps must be 8-bit grayscale")
    return img.astype(np.float64) / 255.0


def write_probmap(probmap: np.ndarray, path: str | Path) -> None:
    probmap = np.asarray(probmap, dtype=np.float64)
    if probmap.min() < 0.0 or probmap.max() > 1.0:
        raise ValueError("probability map values must lie in [0, 1]")
    save_image(np.rint(probmap * 255.0).astype(np.uint8), path)
