"""Ground-truth correspondence derivation.

Part pixels are lifted to 3D, the larger side is equalized by furthest point
sampling, and an exact assignment under the functional alignment gives the
pair set. The assignment solver is a shortest-augmenting-path implementation
(square matrices only); exactness is what makes the derived pairs usable as
ground truth, so this is authored here rather than approximated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .camera import CameraView, CorrespondenceSet, Obb, RigidTransform, backproject

logger = logging.getLogger(__name__)


class GroundTruthError(ValueError):
    pass


class AssignmentError(ValueError):
    pass


def fps(points: np.ndarray, k: int) -> np.ndarray:
    """Furthest point sampling; returns k indices into ``points``.

    Starts at the point farthest from the centroid, then greedily adds the
    point maximizing the min distance to the selected set. Exact distance ties
    resolve to the lowest index (numpy argmax takes the first maximum).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise GroundTruthError(f"points must be (N, d), got {pts.shape}")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise GroundTruthError(f"k must be in [1, {n}], got {k}")
    centroid = pts.mean(axis=0)
    d2 = np.sum((pts - centroid) ** 2, axis=1)
    first = int(np.argmax(d2))
    selected = np.empty(k, dtype=np.int64)
    selected[0] = first
    min_d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1), out=min_d2)
    return selected


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost assignment for a square cost matrix.

    Returns perm with perm[i] = column assigned to row i. Jonker-Volgenant
    style shortest augmenting path with potentials, O(n^3), inner loops
    vectorized over columns.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise AssignmentError(f"cost matrix must be square, got {c.shape}")
    if c.size == 0:
        raise AssignmentError("cost matrix is empty")
    if not np.all(np.isfinite(c)):
        raise AssignmentError("cost matrix must be finite")
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)   # p[j] = row matched to column j, 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = c[i0 - 1, :] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            if better.any():
                minv[1:][better] = cur[better]
                way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            # rows on the alternating tree are distinct, so fancy += is safe
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def assignment_cost(cost: np.ndarray, perm: np.ndarray) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(c[np.arange(c.shape[0]), perm].sum())


@dataclass(frozen=True)
class Alignment:
    """Functional alignment: transform maps object-b-frame points into the
    object-a frame; the OBBs bound each functional part in its own frame."""

    transform: RigidTransform
    obb_a: Obb
    obb_b: Obb
    function: str = ""

    def swapped(self) -> "Alignment":
        return Alignment(
            transform=self.transform.inverse(),
            obb_a=self.obb_b,
            obb_b=self.obb_a,
            function=self.function,
        )


def part_pixels(
    view: CameraView,
    obb: Obb,
    object_to_world: RigidTransform | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Masked pixels whose surface point falls inside the part OBB.

    Returns (pixels (n, 2) int64 row-major order, points (n, 3) object frame).
    """
    rows, cols = np.nonzero(view.mask & (view.depth > 0))
    if rows.size == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3))
    pixels = np.stack([rows, cols], axis=1)
    world = backproject(pixels, view.depth[rows, cols], view.camera)
    obj_pts = world if object_to_world is None else object_to_world.inverse().apply(world)
    inside = obb.contains(obj_pts)
    return pixels[inside], obj_pts[inside]


def derive_gt(
    view_a: CameraView,
    view_b: CameraView,
    alignment: Alignment,
    object_to_world_a: RigidTransform | None = None,
    object_to_world_b: RigidTransform | None = None,
    max_pairs: int | None = 512,
) -> tuple[CorrespondenceSet, dict]:
    """Ground-truth pairs between two views under a functional alignment.

    Part pixel sets are equalized to the smaller side (capped at max_pairs;
    the exact assignment below is cubic in the set size) by furthest point
    sampling on their 3D points, B's points are carried into A's frame by the
    alignment, and the exact assignment minimizing total 3D distance pairs
    them up. Also returns {"residual_mean", "pairs"}.
    """
    pix_a, x_a = part_pixels(view_a, alignment.obb_a, object_to_world_a)
    pix_b, x_b = part_pixels(view_b, alignment.obb_b, object_to_world_b)
    if len(pix_a) == 0 or len(pix_b) == 0:
        raise GroundTruthError("functional part is not visible in one of the views")
    y_b = alignment.transform.apply(x_b)
    k = min(len(pix_a), len(pix_b))
    if max_pairs is not None:
        k = min(k, max_pairs)
    if len(pix_a) > k:
        sel = fps(x_a, k)
        pix_a, x_a = pix_a[sel], x_a[sel]
    if len(pix_b) > k:
        sel = fps(y_b, k)
        pix_b, y_b = pix_b[sel], y_b[sel]
    diff = x_a[:, None, :] - y_b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    perm = hungarian(cost)
    residuals = cost[np.arange(k), perm]
    pairs = CorrespondenceSet(pixels_a=pix_a, pixels_b=pix_b[perm])
    return pairs, {"residual_mean": float(residuals.mean()), "pairs": int(k)}


def rank_views_by_part(
    views: list[CameraView],
    obb: Obb,
    object_to_world: RigidTransform | None = None,
    pool: int | None = None,
) -> tuple[list[int], np.ndarray]:
    """Views ordered by descending part-pixel count (ties: lower index first),
    restricted to the first ``pool`` views. Returns (order, counts)."""
    pool = len(views) if pool is None else pool
    if pool > len(views):
        raise GroundTruthError(f"pool {pool} exceeds number of views {len(views)}")
    counts = np.array([len(part_pixels(v, obb, object_to_world)[0]) for v in views[:pool]])
    order = sorted(range(pool), key=lambda i: (-counts[i], i))
    return order, counts


def select_views(
    views: list[CameraView],
    obb: Obb,
    object_to_world: RigidTransform | None = None,
    top_k: int = 5,
    pool: int = 30,
    trials: int = 6,
    seed: int = 0,
) -> list[tuple[int, int]]:
    """Sample ``trials`` view pairs from the most part-visible views.

    Views are ranked by part-pixel count within the first ``pool``; pairs are
    drawn uniformly (with replacement) from the nonzero-count members of the
    top ``top_k``. A single visible view therefore appears in every pair.
    """
    order, counts = rank_views_by_part(views, obb, object_to_world, pool)
    top = [i for i in order[:top_k] if counts[i] > 0]
    if not top:
        raise GroundTruthError("no view shows the functional part")
    rng = np.random.default_rng(seed)
    return [(top[rng.integers(len(top))], top[rng.integers(len(top))]) for _ in range(trials)]
