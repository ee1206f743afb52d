"""Pseudo-label aggregation: project 2D part detections onto a surface point
cloud by voting across views, threshold the vote mass, and read the result
back out as per-view part masks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraView, project_with_validity, round_half_up
from .scenes import ParametricObject, _face_areas

logger = logging.getLogger(__name__)

VISIBILITY_TOL_REL = 0.01  # relative depth agreement for a point to count as visible


class PseudoLabelError(ValueError):
    pass


@dataclass
class Detection:
    """One 2D detection: pixel bbox (r0, c0, r1, c1), inclusive bounds."""

    view: int
    bbox: tuple[float, float, float, float]
    trial: int = 0


@dataclass
class ScoredPointCloud:
    points: np.ndarray  # (n, 3) object frame
    scores: np.ndarray  # (n,) in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.scores.shape[0] != self.points.shape[0]:
            raise PseudoLabelError("scores length must match points")
        if self.scores.size and (self.scores.min() < -1e-9 or self.scores.max() > 1 + 1e-9):
            raise PseudoLabelError("scores must lie in [0, 1]")


def load_detections(path: str | Path) -> list[Detection]:
    """Parse a JSONL detections file: {"view": int, "trial": int, "bbox": [r0, c0, r1, c1]}."""
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                bbox = tuple(float(v) for v in doc["bbox"])
                if len(bbox) != 4:
                    raise ValueError("bbox needs 4 values")
                out.append(Detection(view=int(doc["view"]), bbox=bbox, trial=int(doc.get("trial", 0))))
            except (KeyError, ValueError, TypeError) as e:
                raise PseudoLabelError(f"{path}:{lineno}: bad detection record: {e}") from e
    return out


def sample_surface(obj: ParametricObject, n: int, seed: int) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface, (n, 3)."""
    if n < 1:
        raise PseudoLabelError("need n >= 1 samples")
    if obj.faces.size == 0:
        raise PseudoLabelError("mesh has no faces")
    areas = _face_areas(obj.vertices, obj.faces)
    total = areas.sum()
    if total < 1e-12:
        raise PseudoLabelError("mesh surface is degenerate (zero area)")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(obj.faces), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)
    u = 1.0 - s
    v = s * (1.0 - r2)
    w = s * r2
    tri = obj.vertices[obj.faces[face_idx]]
    return u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + w[:, None] * tri[:, 2]


def accumulate_votes(
    points: np.ndarray,
    views: list[CameraView],
    detections: list[Detection],
    tol_rel: float = VISIBILITY_TOL_REL,
) -> ScoredPointCloud:
    """Count, per 3D point, the detections whose bbox contains it while visible.

    A point counts for a detection iff its projection lands inside the bbox
    (nearest pixel, inclusive bounds) and the projected depth agrees with the
    view's stored depth at that pixel within tol_rel (occlusion test). Counts
    are divided by their max; no detections, or nothing visible, yields all
    zeros. The result does not depend on detection order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros(len(pts), dtype=np.int64)
    proj_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for det in detections:
        if not 0 <= det.view < len(views):
            raise PseudoLabelError(f"detection references missing view index {det.view}")
        view = views[det.view]
        if det.view not in proj_cache:
            proj_cache[det.view] = project_with_validity(pts, view.camera)
        proj, z = proj_cache[det.view]
        pix = round_half_up(proj)
        r0, c0, r1, c1 = det.bbox
        ok = (
            (z > 0)
            & (pix[:, 0] >= max(r0, 0))
            & (pix[:, 0] <= min(r1, view.camera.height - 1))
            & (pix[:, 1] >= max(c0, 0))
            & (pix[:, 1] <= min(c1, view.camera.width - 1))
        )
        if ok.any():
            pr = np.where(ok, pix[:, 0], 0)
            pc = np.where(ok, pix[:, 1], 0)
            stored = view.depth[pr, pc]
            ok &= (stored > 0) & (np.abs(z - stored) <= tol_rel * stored)
            counts[ok] += 1
    m = counts.max()
    scores = counts / m if m > 0 else np.zeros(len(pts))
    return ScoredPointCloud(points=pts, scores=scores)


def edge_modulate(scores: np.ndarray, edge_probs: np.ndarray) -> np.ndarray:
    """Pointwise product with per-point edge probabilities, re-maxed to [0, 1]."""
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(edge_probs, dtype=np.float64)
    if s.shape != e.shape:
        raise PseudoLabelError("scores and edge_probs shapes differ")
    if e.size and (e.min() < 0 or e.max() > 1):
        raise PseudoLabelError("edge probabilities must lie in [0, 1]")
    out = s * e
    m = out.max() if out.size else 0.0
    return out / m if m > 0 else out


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu's threshold over values in [0, 1].

    Histogram the values into ``bins`` equal bins, then return the interior
    bin edge maximizing the inter-class variance w0*w1*(mu0-mu1)^2, computed
    from bin centers. Ties resolve toward the lower edge. Raises on constant
    input (no threshold separates anything).
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise PseudoLabelError("no values")
    if v.min() < -1e-12 or v.max() > 1 + 1e-12:
        raise PseudoLabelError("values must lie in [0, 1]")
    if bins < 2:
        raise PseudoLabelError("need at least 2 bins")
    if np.all(v == v[0]):
        raise PseudoLabelError("constant input has no threshold")
    counts, edges = np.histogram(v, bins=bins, range=(0.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)[:-1]                     # mass strictly below edge e, e = 1..bins-1
    w1 = counts.sum() - w0
    mass0 = np.cumsum(counts * centers)[:-1]
    mass1 = (counts * centers).sum() - mass0
    valid = (w0 > 0) & (w1 > 0)
    var = np.zeros(bins - 1)
    mu0 = np.where(w0 > 0, mass0 / np.maximum(w0, 1), 0.0)
    mu1 = np.where(w1 > 0, mass1 / np.maximum(w1, 1), 0.0)
    var[valid] = (w0 * w1)[valid] * (mu0 - mu1)[valid] ** 2 / counts.sum() ** 2
    best = int(np.argmax(var))  # argmax takes the first maximum: ties go low
    return float(edges[best + 1])


def _dilate_cross(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _erode_cross(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    # outside the image counts as unset
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out


def binary_close(mask: np.ndarray, iters: int) -> np.ndarray:
    out = mask
    for _ in range(iters):
        out = _dilate_cross(out)
    for _ in range(iters):
        out = _erode_cross(out)
    return out


def extract_mask(
    cloud: ScoredPointCloud,
    view: CameraView,
    threshold: float,
    splat_radius: int = 1,
    close_iters: int = 2,
    tol_rel: float = VISIBILITY_TOL_REL,
) -> np.ndarray:
    """Per-view part mask from a scored cloud.

    Points with score >= threshold that pass the visibility test are splatted
    as radius-``splat_radius`` disks, intersected with the object mask, then
    morphologically closed (``close_iters`` dilations then erosions, 3x3
    cross). The result is clipped to the object mask, so the output is always
    a subset of it.
    """
    keep = cloud.scores >= threshold
    h, w = view.camera.height, view.camera.width
    canvas = np.zeros((h, w), dtype=bool)
    if keep.any():
        proj, z = project_with_validity(cloud.points[keep], view.camera)
        pix = round_half_up(proj)
        ok = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] < h) & (pix[:, 1] >= 0) & (pix[:, 1] < w)
        pr = np.where(ok, pix[:, 0], 0)
        pc = np.where(ok, pix[:, 1], 0)
        stored = view.depth[pr, pc]
        ok &= (stored > 0) & (np.abs(z - stored) <= tol_rel * stored)
        canvas[pix[ok, 0], pix[ok, 1]] = True
        if splat_radius > 0:
            rr, cc = np.nonzero(canvas)
            offs = [
                (dr, dc)
                for dr in range(-splat_radius, splat_radius + 1)
                for dc in range(-splat_radius, splat_radius + 1)
                if dr * dr + dc * dc <= splat_radius * splat_radius
            ]
            for dr, dc in offs:
                r2 = np.clip(rr + dr, 0, h - 1)
                c2 = np.clip(cc + dc, 0, w - 1)
                canvas[r2, c2] = True
    canvas &= view.mask
    canvas = binary_close(canvas, close_iters)
    return canvas & view.mask
