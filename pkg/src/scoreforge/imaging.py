"""Raster primitives: grayscale, blur, Sauvola binarization, patch rotation,
connected components, and masked ink transfer.

Conventions: grayscale images are ``uint8`` arrays of shape ``(h, w)``;
binary masks are ``bool`` arrays of the same shape with ``True`` marking
ink/foreground; affine transforms are 3x3 homogeneous matrices mapping
pixel-center column vectors ``(x, y, 1)``. Positive rotation angles turn
clockwise in raster orientation (y grows downward).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .corpus import BBox

log = logging.getLogger("scoreforge.imaging")


@dataclass(frozen=True)
class SauvolaParams:
    """Local-threshold parameters: T = m * (1 + k * (s / r - 1))."""

    window: int = 25
    k: float = 0.2
    r: float = 128.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not (0.0 < self.k <= 1.0):
            raise ValueError(f"k must be in (0, 1], got {self.k}")
        if self.r <= 0:
            raise ValueError(f"dynamic range r must be positive, got {self.r}")


@dataclass(frozen=True)
class BackgroundConfig:
    """Background-estimation settings.

    ``sigma=None`` selects max(page_w, page_h) / 100 per image. Blurring is
    repeated ``passes`` times, then up to ``max_extra_passes`` more until no
    foreground component of the result's Sauvola mask covers more than
    ``residual_area_frac`` of the page.
    """

    sigma: float | None = None
    passes: int = 2
    residual_area_frac: float = 0.001
    max_extra_passes: int = 6
    binarization: SauvolaParams = field(default_factory=SauvolaParams)

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.passes < 1:
            raise ValueError("at least one blur pass is required")


@dataclass
class Component:
    """One connected foreground component: pixel coordinates, hull, size."""

    pixels: np.ndarray  # shape (area, 2), columns (x, y)
    bbox: BBox
    area: int


def load_image(path) -> np.ndarray:
    """Read a PNG as uint8, shape (h, w) for grayscale or (h, w, 3) for RGB."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an RGB raster to 8-bit luminance; grayscale passes through.

    Luminance is round(0.299 R + 0.587 G + 0.114 B), rounding half to even.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    if img.ndim == 2:
        return img.astype(np.uint8, copy=False)
    if img.ndim == 3 and img.shape[2] == 3:
        rgb = img.astype(np.float64)
        lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        return np.rint(lum).astype(np.uint8)
    raise ValueError(f"expected (h, w) or (h, w, 3) raster, got shape {img.shape}")


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur; returns float64 to preserve sub-level detail."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return gaussian_filter(np.asarray(img, dtype=np.float64), sigma=sigma, mode="nearest")


def estimate_background(img: np.ndarray, cfg: BackgroundConfig = BackgroundConfig()) -> np.ndarray:
    """Fade page content to an empty background with repeated Gaussian blur.

    Blurs ``cfg.passes`` times, then keeps blurring (bounded by
    ``cfg.max_extra_passes``) while the Sauvola mask of the result still
    contains a foreground component larger than ``cfg.residual_area_frac``
    of the page.
    """
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty (h, w) grayscale image, got shape {img.shape}")
    h, w = img.shape
    sigma = cfg.sigma if cfg.sigma is not None else max(w, h) / 100.0
    limit = cfg.residual_area_frac * w * h

    out = img.astype(np.float64)
    for _ in range(cfg.passes):
        out = gaussian_blur(out, sigma)
    for _ in range(cfg.max_extra_passes):
        if _largest_component_area(np.rint(out).astype(np.uint8), cfg.binarization) <= limit:
            break
        out = gaussian_blur(out, sigma)
    else:
        residual = _largest_component_area(np.rint(out).astype(np.uint8), cfg.binarization)
        if residual > limit:
            log.warning(
                "background residual component of %d px still exceeds %.0f px after %d passes",
                residual, limit, cfg.passes + cfg.max_extra_passes,
            )
    return np.rint(out).astype(np.uint8)


def _largest_component_area(img: np.ndarray, params: SauvolaParams) -> int:
    comps = connected_components(sauvola_binarize(img, params.window, params.k, params.r))
    return max((c.area for c in comps), default=0)


def sauvola_threshold(img: np.ndarray, window: int = 25, k: float = 0.2, r: float = 128.0) -> np.ndarray:
    """Per-pixel Sauvola threshold map T = m * (1 + k * (s / r - 1)).

    m and s are the mean and standard deviation over the window centered at
    each pixel, clipped at the image borders (statistics over the valid
    intersection). Computed with integral images; sums are exact in float64
    for 8-bit inputs, so the map matches a direct per-pixel evaluation to
    floating rounding.
    """
    SauvolaParams(window, k, r)  # validate
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty (h, w) grayscale image, got shape {img.shape}")
    h, w = img.shape
    vals = img.astype(np.float64)

    integral = np.zeros((h + 1, w + 1))
    integral_sq = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(vals, axis=0), axis=1, out=integral[1:, 1:])
    np.cumsum(np.cumsum(vals * vals, axis=0), axis=1, out=integral_sq[1:, 1:])

    half = window // 2
    y0 = np.clip(np.arange(h) - half, 0, h)
    y1 = np.clip(np.arange(h) + half + 1, 0, h)
    x0 = np.clip(np.arange(w) - half, 0, w)
    x1 = np.clip(np.arange(w) + half + 1, 0, w)

    def window_sums(table: np.ndarray) -> np.ndarray:
        top, bot = table[y0], table[y1]
        return (bot[:, x1] - bot[:, x0]) - (top[:, x1] - top[:, x0])

    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    mean = window_sums(integral) / counts
    var = window_sums(integral_sq) / counts - mean * mean
    std = np.sqrt(np.maximum(var, 0.0))
    return mean * (1.0 + k * (std / r - 1.0))


def sauvola_binarize(img: np.ndarray, window: int = 25, k: float = 0.2, r: float = 128.0) -> np.ndarray:
    """Binary ink mask: a pixel is ink iff its value is strictly below T."""
    return np.asarray(img, dtype=np.float64) < sauvola_threshold(img, window, k, r)


def rotated_hull_size(w: int, h: int, angle_deg: float) -> tuple[int, int]:
    """Axis-aligned hull size of a w x h rectangle rotated by angle_deg."""
    theta = math.radians(angle_deg)
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    # tolerance keeps exact quarter turns from spilling into an extra pixel
    out_w = max(1, math.ceil(w * c + h * s - 1e-9))
    out_h = max(1, math.ceil(w * s + h * c - 1e-9))
    return out_w, out_h


def border_median(patch: np.ndarray) -> float:
    """Median luminance of the one-pixel border ring."""
    patch = np.asarray(patch)
    ring = np.concatenate([patch[0, :], patch[-1, :], patch[1:-1, 0], patch[1:-1, -1]])
    return float(np.median(ring))


def rotation_about(cx: float, cy: float, angle_deg: float) -> np.ndarray:
    """3x3 transform rotating by angle_deg about the point (cx, cy)."""
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ]
    )


def rotate_patch(
    patch: np.ndarray,
    angle_deg: float,
    fill: float | None = None,
    interpolation: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a grayscale patch about its center onto its axis-aligned hull.

    Args:
        patch: (h, w) uint8 raster.
        angle_deg: rotation in (-180, 180); positive turns clockwise on screen.
        fill: luminance for hull corners the source does not cover; defaults
            to the median of the patch's one-pixel border so corners blend
            with the local paper tone.
        interpolation: "bilinear" (default) or "nearest".

    Returns:
        (rotated patch, 3x3 transform mapping input pixel centers to output
        pixel centers).
    """
    patch = np.asarray(patch, dtype=np.uint8)
    if patch.ndim != 2 or patch.size == 0:
        raise ValueError(f"expected a non-empty (h, w) patch, got shape {patch.shape}")
    if not (-180.0 < angle_deg < 180.0):
        raise ValueError(f"angle must lie in (-180, 180), got {angle_deg}")
    if interpolation not in ("bilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")

    h, w = patch.shape
    if fill is None:
        fill = border_median(patch)

    out_w, out_h = rotated_hull_size(w, h, angle_deg)
    cx_in, cy_in = (w - 1) / 2.0, (h - 1) / 2.0
    cx_out, cy_out = (out_w - 1) / 2.0, (out_h - 1) / 2.0

    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    transform = np.array(
        [
            [c, -s, cx_out - c * cx_in + s * cy_in],
            [s, c, cy_out - s * cx_in - c * cy_in],
            [0.0, 0.0, 1.0],
        ]
    )

    if angle_deg == 0.0:
        return patch.copy(), transform

    # inverse map: sample source position for every output pixel
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    dx, dy = xs - cx_out, ys - cy_out
    sx = c * dx + s * dy + cx_in
    sy = -s * dx + c * dy + cy_in

    # tolerance keeps float jitter at exact quarter turns from leaking fill
    eps = 1e-9
    inside = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    vals = patch.astype(np.float64)
    if interpolation == "nearest":
        xi = np.clip(np.rint(sx).astype(np.intp), 0, w - 1)
        yi = np.clip(np.rint(sy).astype(np.intp), 0, h - 1)
        sampled = vals[yi, xi]
    else:
        x0 = np.clip(np.floor(sx).astype(np.intp), 0, w - 1)
        y0 = np.clip(np.floor(sy).astype(np.intp), 0, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = np.clip(sx - x0, 0.0, 1.0)
        fy = np.clip(sy - y0, 0.0, 1.0)
        top = vals[y0, x0] * (1 - fx) + vals[y0, x1] * fx
        bot = vals[y1, x0] * (1 - fx) + vals[y1, x1] * fx
        sampled = top * (1 - fy) + bot * fy

    out = np.where(inside, sampled, float(fill))
    return np.rint(out).astype(np.uint8), transform


def transform_bbox(bbox: BBox, transform: np.ndarray) -> BBox:
    """Axis-aligned hull of a box's four corners under an affine transform."""
    m = np.asarray(transform, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 transform, got shape {m.shape}")
    if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) < 1e-12:
        raise ValueError("singular transform")
    corners = np.array(
        [
            [bbox.x, bbox.y, 1.0],
            [bbox.right, bbox.y, 1.0],
            [bbox.right, bbox.bottom, 1.0],
            [bbox.x, bbox.bottom, 1.0],
        ]
    )
    mapped = corners @ m.T
    xs, ys = mapped[:, 0], mapped[:, 1]
    return BBox(float(xs.min()), float(ys.min()), float(xs.max() - xs.min()), float(ys.max() - ys.min()))


def _row_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) column intervals of consecutive True pixels."""
    padded = np.empty(row.size + 2, dtype=np.int8)
    padded[0] = padded[-1] = 0
    padded[1:-1] = row
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Label foreground components with run-based two-pass union-find.

    Returns one Component per maximal connected pixel set, ordered by first
    appearance in row-major scan. Component bboxes are tight hulls; areas
    sum to the total foreground count.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a (h, w) mask, got shape {mask.shape}")

    parent: list[int] = []

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    runs: list[tuple[int, int, int, int]] = []  # (row, start, end, label)
    prev: list[tuple[int, int, int]] = []  # (start, end, label) of previous row
    for y in range(mask.shape[0]):
        current: list[tuple[int, int, int]] = []
        j = 0
        for start, end in _row_runs(mask[y]):
            label = len(parent)
            parent.append(label)
            # advance over previous-row runs that end before this one starts
            while j < len(prev) and (prev[j][1] < start if connectivity == 8 else prev[j][1] <= start):
                j += 1
            k = j
            while k < len(prev):
                ps, pe, plabel = prev[k]
                touches = (ps <= end) if connectivity == 8 else (ps < end)
                if not touches:
                    break
                union(label, plabel)
                k += 1
            runs.append((y, int(start), int(end), label))
            current.append((int(start), int(end), label))
        prev = current

    groups: dict[int, list[tuple[int, int, int]]] = {}
    order: list[int] = []
    for y, start, end, label in runs:
        root = find(label)
        if root not in groups:
            groups[root] = []
            order.append(root)
        groups[root].append((y, start, end))

    components = []
    for root in order:
        spans = groups[root]
        xs = np.concatenate([np.arange(s, e, dtype=np.int64) for _, s, e in spans])
        ys = np.concatenate([np.full(e - s, y, dtype=np.int64) for y, s, e in spans])
        x_min, x_max = int(xs.min()), int(xs.max())
        y_min, y_max = int(ys.min()), int(ys.max())
        components.append(
            Component(
                pixels=np.column_stack([xs, ys]),
                bbox=BBox(float(x_min), float(y_min), float(x_max - x_min + 1), float(y_max - y_min + 1)),
                area=int(xs.size),
            )
        )
    return components


def transfer_ink(
    dst: np.ndarray,
    patch: np.ndarray,
    mask: np.ndarray,
    offset_x: int,
    offset_y: int,
) -> int:
    """Overwrite dst with the patch's mask-true pixels at the given offset.

    Mask-false pixels leave dst untouched; targets outside dst are dropped.

    Returns:
        The number of mask-true pixels clipped away at the dst borders.
    """
    patch = np.asarray(patch)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != patch.shape:
        raise ValueError(f"mask shape {mask.shape} != patch shape {patch.shape}")
    ys, xs = np.nonzero(mask)
    tx = xs + int(offset_x)
    ty = ys + int(offset_y)
    ok = (tx >= 0) & (tx < dst.shape[1]) & (ty >= 0) & (ty < dst.shape[0])
    dst[ty[ok], tx[ok]] = patch[ys[ok], xs[ok]]
    return int(np.size(ok) - np.count_nonzero(ok))
