"""Rendering of correspondence results to PNG.

Two styles: `draw_matches` shows the top-ranked pairs as lines across a
side-by-side panel; `transfer_heat` paints every source-mask pixel with a hue
keyed to where it lands in the target view.
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

# ten visually distinct line colors, reused cyclically
PALETTE = [
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
]

_GAP = 8  # pixels between the two panels


def depth_panel(depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Grayscale shading of a depth map: near = bright, background = dark."""
    out = np.full(depth.shape + (3,), 28, dtype=np.uint8)
    if mask.any():
        d = depth[mask]
        lo, hi = float(d.min()), float(d.max())
        span = (hi - lo) or 1.0
        shade = (231.0 - 175.0 * (depth - lo) / span).clip(56.0, 231.0)
        out[mask] = shade[mask, None].astype(np.uint8)
    return out


def side_by_side(panel_a: np.ndarray, panel_b: np.ndarray) -> tuple[Image.Image, int]:
    """Compose two HxWx3 panels horizontally; returns (image, x offset of b)."""
    ha, wa = panel_a.shape[:2]
    hb, wb = panel_b.shape[:2]
    h = max(ha, hb)
    canvas = np.zeros((h, wa + _GAP + wb, 3), dtype=np.uint8)
    canvas[:ha, :wa] = panel_a
    canvas[:hb, wa + _GAP :] = panel_b
    return Image.fromarray(canvas), wa + _GAP


def draw_matches(
    view_a,
    view_b,
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    scores: np.ndarray | None = None,
    top: int = 10,
) -> Image.Image:
    """Top-`top` correspondences as lines over depth-shaded panels.

    Pairs are drawn best-first by score (input order when scores are absent),
    later lines thinner so the strongest stay legible.
    """
    pixels_a = np.asarray(pixels_a)
    pixels_b = np.asarray(pixels_b)
    if pixels_a.shape != pixels_b.shape or pixels_a.ndim != 2 or pixels_a.shape[1] != 2:
        raise ValueError("pixels_a and pixels_b must both be (n, 2)")
    order = np.arange(len(pixels_a))
    if scores is not None:
        order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    order = order[:top]

    img, off = side_by_side(depth_panel(view_a.depth, view_a.mask), depth_panel(view_b.depth, view_b.mask))
    draw = ImageDraw.Draw(img)
    for rank, idx in enumerate(order):
        ra, ca = pixels_a[idx]
        rb, cb = pixels_b[idx]
        color = PALETTE[rank % len(PALETTE)]
        width = max(1, 3 - rank // 4)
        draw.line([(int(ca), int(ra)), (int(cb) + off, int(rb))], fill=color, width=width)
        for x, y in ((int(ca), int(ra)), (int(cb) + off, int(rb))):
            draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=color)
    return img


def transfer_heat(view_a, view_b, pixels_a: np.ndarray, pixels_b: np.ndarray) -> Image.Image:
    """Dense transfer view: each source pixel and its match share a hue.

    Hue encodes the source pixel's angle around the source-mask centroid, so
    a correct correspondence map reproduces the same color wheel on the right.
    """
    pixels_a = np.asarray(pixels_a)
    pixels_b = np.asarray(pixels_b)
    panel_a = depth_panel(view_a.depth, view_a.mask)
    panel_b = depth_panel(view_b.depth, view_b.mask)
    if len(pixels_a):
        centroid = pixels_a.mean(axis=0)
        ang = np.arctan2(pixels_a[:, 0] - centroid[0], pixels_a[:, 1] - centroid[1])
        hues = (ang / (2.0 * np.pi)) % 1.0
        rgb = np.array([colorsys.hsv_to_rgb(h, 0.9, 1.0) for h in hues])
        rgb = (255.0 * rgb).astype(np.uint8)
        for panel, pts in ((panel_a, pixels_a), (panel_b, pixels_b)):
            r = np.clip(pts[:, 0], 0, panel.shape[0] - 1).astype(int)
            c = np.clip(pts[:, 1], 0, panel.shape[1] - 1).astype(int)
            panel[r, c] = rgb
    img, _ = side_by_side(panel_a, panel_b)
    return img


def save_png(img: Image.Image, path: str | Path) -> None:
    img.save(Path(path), format="PNG")
