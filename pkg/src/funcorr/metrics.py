"""Correspondence metrics: label transfer (PCK, normalized distance) and
correspondence discovery (precision/recall over a ranked pair list, Best F1
and average precision), plus mask IoU and permutation-chance baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import CorrespondenceSet

logger = logging.getLogger(__name__)

DEFAULT_T_GRID = tuple(range(1, 101))  # percent of ranked pairs kept


class MetricsError(ValueError):
    pass


@dataclass
class EmbeddedView:
    """Unit embeddings over one view's object mask.

    pixels are (n, 2) int64 in row-major order; emb is (n, D). pred_part, when
    set, restricts/tiers matching the way predicted functional-part masks do.
    """

    pixels: np.ndarray
    emb: np.ndarray
    mask: np.ndarray
    pred_part: np.ndarray | None = None
    _index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        self.emb = np.asarray(self.emb, dtype=np.float64)
        self.mask = np.asarray(self.mask).astype(bool)
        if self.emb.shape[0] != self.pixels.shape[0]:
            raise MetricsError("pixels and embeddings disagree in length")
        if self.pred_part is not None:
            self.pred_part = np.asarray(self.pred_part).astype(bool)
            if self.pred_part.shape != self.mask.shape:
                raise MetricsError("pred_part shape differs from mask")
            if not self.pred_part.any():
                logger.warning("empty predicted part mask; ignoring it")
                self.pred_part = None
        idx = np.full(self.mask.shape, -1, dtype=np.int64)
        idx[self.pixels[:, 0], self.pixels[:, 1]] = np.arange(len(self.pixels))
        self._index = idx

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.mask.shape

    def index_of(self, pixels: np.ndarray) -> np.ndarray:
        pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        idx = self._index[pix[:, 0], pix[:, 1]]
        if np.any(idx < 0):
            raise MetricsError("query pixel carries no embedding (outside the mask)")
        return idx


def _argmax_match(query_emb: np.ndarray, region_emb: np.ndarray, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise argmax of query @ region.T without materializing everything.

    Ties take the lowest region index; with region pixels in row-major order
    that is the lowest (row, col). Cosine similarity on unit embeddings is the
    plain dot product, and argmax is invariant to positive rescaling of the
    region embeddings.
    """
    n = query_emb.shape[0]
    best_idx = np.empty(n, dtype=np.int64)
    best_sim = np.empty(n)
    for s in range(0, n, chunk):
        sims = query_emb[s : s + chunk] @ region_emb.T
        best_idx[s : s + chunk] = np.argmax(sims, axis=1)
        best_sim[s : s + chunk] = sims[np.arange(sims.shape[0]), best_idx[s : s + chunk]]
    return best_idx, best_sim


def transfer_match(src: EmbeddedView, dst: EmbeddedView, queries: np.ndarray) -> np.ndarray:
    """Best-cosine pixel in dst for each query pixel of src.

    The search region is dst's predicted part mask when present, otherwise the
    whole object mask. Returns (m, 2) int64 pixels.
    """
    q_idx = src.index_of(queries)
    if dst.pred_part is not None:
        region = np.nonzero(dst.pred_part[dst.pixels[:, 0], dst.pixels[:, 1]])[0]
    else:
        region = np.arange(len(dst.pixels))
    if region.size == 0:
        raise MetricsError("empty destination search region")
    best, _ = _argmax_match(src.emb[q_idx], dst.emb[region])
    return dst.pixels[region[best]]


def label_transfer_metrics(
    matches: np.ndarray,
    gt_targets: np.ndarray,
    image_side: float,
    ks: tuple[float, ...] = (23.0, 10.0),
) -> dict:
    """Distance-based transfer metrics.

    normalized_dist is the mean endpoint error over the image side; pck@k is
    the fraction of matches strictly within k pixels of the target.
    """
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(gt_targets, dtype=np.float64).reshape(-1, 2)
    if m.shape != g.shape:
        raise MetricsError("matches and targets disagree in shape")
    if m.shape[0] == 0:
        raise MetricsError("no matches to score")
    d = np.linalg.norm(m - g, axis=1)
    return {
        "normalized_dist": float(d.mean() / image_side),
        "pck": {str(int(k)): float(np.mean(d < k)) for k in ks},
    }


# ---------------------------------------------------------------------------
# discovery


class _GtMatcher:
    """Greedy matcher against one GT set at one pixel threshold.

    GT pairs are bucketed by the k-sized grid cell of their source endpoint;
    a ranked pair can only consume GT from the 3x3 neighborhood of its own
    cell, which bounds all distance work. Built once and reused across
    rankings (the chance oracle re-matches the same GT 100 times).
    """

    _ENC_W = 1 << 20  # cell key = row_cell * _ENC_W + col_cell

    def __init__(self, gt: CorrespondenceSet, k: float):
        self.k = float(k)
        self.n_gt = len(gt.pixels_a)
        if self.n_gt == 0:
            return
        g1 = gt.pixels_a.astype(np.float64)
        g2 = gt.pixels_b.astype(np.float64)
        self._cell = max(int(np.ceil(k)), 1)
        offsets = [dr * self._ENC_W + dc for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
        buckets: dict[int, list[int]] = {}
        for idx, key in enumerate(self._encode(gt.pixels_a)):
            buckets.setdefault(int(key), []).append(idx)
        # per reachable cell: sorted GT indices of the 3x3 block plus their
        # endpoint coordinates, gathered here so matching never fancy-indexes
        self._neigh: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for key in list(buckets):
            for off in offsets:
                nk = key + off
                if nk in self._neigh:
                    continue
                cand = sorted(j for off2 in offsets for j in buckets.get(nk + off2, ()))
                ja = np.array(cand, dtype=np.int64)
                self._neigh[nk] = (ja, g1[ja], g2[ja])
        self._src_cells = np.fromiter(self._neigh, np.int64, len(self._neigh))
        # cells within one step of any occupied destination cell; a pair whose
        # destination endpoint falls outside cannot be within k of any GT
        self._dst_cells = np.unique(
            np.concatenate([self._encode(gt.pixels_b) + off for off in offsets])
        )

    def _encode(self, pts: np.ndarray) -> np.ndarray:
        cc = pts.astype(np.int64) // self._cell
        return cc[:, 0] * self._ENC_W + cc[:, 1]

    def match(self, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
        """matched[i] = True iff ranked pair i consumed a GT pair (both
        endpoints within k px, each GT pair used once, greedy in rank order,
        nearest GT by max endpoint distance, ties to the lowest GT index)."""
        matched = np.zeros(len(p1), dtype=bool)
        if self.n_gt == 0 or len(p1) == 0:
            return matched
        keep = np.isin(self._encode(p1), self._src_cells) & np.isin(
            self._encode(p2), self._dst_cells
        )
        survivors = np.nonzero(keep)[0]
        if survivors.size == 0:
            return matched
        p1f = p1[survivors].astype(np.float64)
        p2f = p2[survivors].astype(np.float64)
        enc1 = self._encode(p1[survivors])
        kk = self.k * self.k
        # vectorized per cell: (pair, GT candidate, worst squared distance)
        # triples for every candidate within k of both endpoints
        pair_idx, gt_idx, worst = [], [], []
        for key in np.unique(enc1):
            ja, c1, c2 = self._neigh[int(key)]
            if ja.size == 0:
                continue
            grp = np.nonzero(enc1 == key)[0]
            a, b = p1f[grp], p2f[grp]
            dd1 = (a[:, 0:1] - c1[:, 0]) ** 2 + (a[:, 1:2] - c1[:, 1]) ** 2
            dd2 = (b[:, 0:1] - c2[:, 0]) ** 2 + (b[:, 1:2] - c2[:, 1]) ** 2
            ok = (dd1 <= kk) & (dd2 <= kk)
            r, c = np.nonzero(ok)
            if r.size:
                pair_idx.append(survivors[grp[r]])
                gt_idx.append(ja[c])
                worst.append(np.maximum(dd1[r, c], dd2[r, c]))
        if not pair_idx:
            return matched
        pi = np.concatenate(pair_idx)
        ji = np.concatenate(gt_idx)
        wi = np.concatenate(worst)
        # squared distances order like distances; ties fall to lowest GT index
        order = np.lexsort((ji, wi, pi))
        consumed = bytearray(self.n_gt)
        taken: list[int] = []
        current, open_ = -1, False
        for s, j in zip(pi[order].tolist(), ji[order].tolist()):
            if s != current:
                current, open_ = s, True
            if open_ and not consumed[j]:
                consumed[j] = 1
                taken.append(s)
                open_ = False
        matched[taken] = True
        return matched


def _greedy_gt_match(
    p1: np.ndarray, p2: np.ndarray, gt: CorrespondenceSet, k: float
) -> np.ndarray:
    return _GtMatcher(gt, k).match(p1, p2)


def pr_sweep(
    matched_in_rank_order: np.ndarray,
    n_gt: int,
    t_grid: tuple[int, ...] = DEFAULT_T_GRID,
) -> dict:
    """Precision/recall over top-t% prefixes of a ranked matched-flag array,
    plus AP (sum of precision-weighted recall increments) and Best F1."""
    matched = np.asarray(matched_in_rank_order, dtype=bool)
    n = len(matched)
    if n == 0 or n_gt == 0:
        return {"curve": [], "ap": 0.0, "best_f1": 0.0}
    cum = np.cumsum(matched)
    curve = []
    ap = 0.0
    best_f1 = 0.0
    prev_r = 0.0
    for t in t_grid:
        n_t = min(max(int(np.ceil(t / 100.0 * n)), 1), n)
        p = cum[n_t - 1] / n_t
        r = cum[n_t - 1] / n_gt
        curve.append((t, float(p), float(r)))
        ap += (r - prev_r) * p
        prev_r = r
        if p + r > 0:
            best_f1 = max(best_f1, 2 * p * r / (p + r))
    return {"curve": curve, "ap": float(ap), "best_f1": float(best_f1)}


def pr_from_points(points: list[tuple[float, float]]) -> dict:
    """AP and Best F1 from explicit (recall, precision) sweep points in
    ascending-recall order; recall starts from 0."""
    ap = 0.0
    best_f1 = 0.0
    prev_r = 0.0
    for r, p in points:
        ap += (r - prev_r) * p
        prev_r = r
        if p + r > 0:
            best_f1 = max(best_f1, 2 * p * r / (p + r))
    return {"ap": float(ap), "best_f1": float(best_f1)}


def rank_pairs(
    p1: np.ndarray,
    p2: np.ndarray,
    tier: np.ndarray,
    score: np.ndarray,
) -> np.ndarray:
    """Deterministic rank order: tier desc, score desc, then (row, col) of the
    source then destination pixel."""
    order = np.lexsort((p2[:, 1], p2[:, 0], p1[:, 1], p1[:, 0], -score, -tier.astype(np.int64)))
    return order


def discover_pairs(
    src: EmbeddedView,
    dst: EmbeddedView,
    rank_by: str = "score",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ranked candidate correspondences between two embedded views.

    Every source mask pixel is forward-matched into dst and the match is
    cycle-checked back into src; the pair's score is (1 - d_cycle/diag) * sim,
    or plain similarity when rank_by="sim". When both views carry predicted
    part masks, matching runs mask-to-mask and complement-to-complement and
    in-mask pairs occupy a strictly higher rank tier. Returns rank-ordered
    (pixels_src (n,2), pixels_dst (n,2), scores (n,)); all arrays may be empty.
    """
    if rank_by not in ("score", "sim"):
        raise MetricsError(f"rank_by must be 'score' or 'sim', got {rank_by!r}")
    diag = float(np.hypot(*src.image_hw))
    masked_mode = src.pred_part is not None and dst.pred_part is not None

    def split(view: EmbeddedView):
        if masked_mode:
            inpart = view.pred_part[view.pixels[:, 0], view.pixels[:, 1]]
            return np.nonzero(inpart)[0], np.nonzero(~inpart)[0]
        return np.arange(len(view.pixels)), np.zeros(0, dtype=np.int64)

    src_in, src_out = split(src)
    dst_in, dst_out = split(dst)

    p1_list, p2_list, sim_list, tier_list, back_list = [], [], [], [], []
    groups = [(src_in, dst_in, 1)]
    if masked_mode:
        groups.append((src_out, dst_out, 0))
    for q_idx, region_idx, tier in groups:
        if q_idx.size == 0 or region_idx.size == 0:
            if q_idx.size:
                logger.warning("discovery: %d source pixels have an empty search region", q_idx.size)
            continue
        fwd, sim = _argmax_match(src.emb[q_idx], dst.emb[region_idx])
        hit = region_idx[fwd]
        # backward matches for the distinct hit pixels only
        uniq, inv = np.unique(hit, return_inverse=True)
        back, _ = _argmax_match(dst.emb[uniq], src.emb[q_idx])
        back_pix = src.pixels[q_idx[back]]  # cycle returns into the same region's sources
        cyc = back_pix[inv]
        p1 = src.pixels[q_idx]
        d_cyc = np.linalg.norm((p1 - cyc).astype(np.float64), axis=1)
        p1_list.append(p1)
        p2_list.append(dst.pixels[hit])
        sim_list.append(sim)
        tier_list.append(np.full(len(p1), tier, dtype=np.int64))
        back_list.append(d_cyc)

    if not p1_list:
        empty = np.zeros((0, 2), dtype=np.int64)
        return empty, empty.copy(), np.zeros(0)

    p1 = np.concatenate(p1_list)
    p2 = np.concatenate(p2_list)
    sim = np.concatenate(sim_list)
    tier = np.concatenate(tier_list)
    d_cyc = np.concatenate(back_list)
    score = (1.0 - d_cyc / diag) * sim if rank_by == "score" else sim

    order = rank_pairs(p1, p2, tier, score)
    return p1[order], p2[order], score[order]


def score_discovery(
    p1o: np.ndarray,
    p2o: np.ndarray,
    scores: np.ndarray,
    gt: CorrespondenceSet,
    k: float,
    t_grid: tuple[int, ...] = DEFAULT_T_GRID,
) -> dict:
    """PR metrics for a rank-ordered pair list: greedy GT matching (both
    endpoints within k px, each GT pair used once) followed by the top-t%
    sweep."""
    if len(gt) == 0:
        raise MetricsError("empty ground-truth set")
    if not t_grid:
        raise MetricsError("empty t grid")
    if len(p1o) == 0:
        return {"ap": 0.0, "best_f1": 0.0, "curve": [], "n_discovered": 0, "n_gt": len(gt), "pairs": None}
    matched = _greedy_gt_match(p1o, p2o, gt, k)
    out = pr_sweep(matched, len(gt), t_grid)
    out.update({
        "n_discovered": int(len(p1o)),
        "n_gt": int(len(gt)),
        "pairs": (p1o, p2o, scores),
    })
    return out


def discovery(
    src: EmbeddedView,
    dst: EmbeddedView,
    gt: CorrespondenceSet,
    k: float,
    t_grid: tuple[int, ...] = DEFAULT_T_GRID,
    rank_by: str = "score",
) -> dict:
    """discover_pairs followed by score_discovery at one threshold k."""
    p1o, p2o, scores = discover_pairs(src, dst, rank_by)
    return score_discovery(p1o, p2o, scores, gt, k, t_grid)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 1.0 when both are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise MetricsError("mask shapes differ")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


# ---------------------------------------------------------------------------
# permutation chance baselines


def chance_label_transfer(
    dst_mask: np.ndarray,
    gt: CorrespondenceSet,
    image_side: float,
    ks: tuple[float, ...] = (23.0, 10.0),
    trials: int = 100,
    seed: int = 0,
) -> dict:
    """Mean label-transfer metrics of random matchings into the dst mask."""
    rows, cols = np.nonzero(np.asarray(dst_mask).astype(bool))
    if rows.size == 0:
        raise MetricsError("empty destination mask")
    pix = np.stack([rows, cols], axis=1)
    rng = np.random.default_rng(seed)
    agg = {"normalized_dist": 0.0, "pck": {str(int(k)): 0.0 for k in ks}}
    for _ in range(trials):
        idx = rng.integers(len(pix), size=len(gt))
        m = label_transfer_metrics(pix[idx], gt.pixels_b, image_side, ks)
        agg["normalized_dist"] += m["normalized_dist"] / trials
        for k in agg["pck"]:
            agg["pck"][k] += m["pck"][k] / trials
    return agg


def chance_discovery(
    src_mask: np.ndarray,
    dst_mask: np.ndarray,
    gt: CorrespondenceSet,
    k: float,
    t_grid: tuple[int, ...] = DEFAULT_T_GRID,
    trials: int = 100,
    seed: int = 0,
) -> dict:
    """Mean discovery AP / Best F1 of randomly matched, randomly scored pairs."""
    r1, c1 = np.nonzero(np.asarray(src_mask).astype(bool))
    r2, c2 = np.nonzero(np.asarray(dst_mask).astype(bool))
    if r1.size == 0 or r2.size == 0:
        raise MetricsError("empty mask")
    src_pix = np.stack([r1, c1], axis=1)
    dst_pix = np.stack([r2, c2], axis=1)
    rng = np.random.default_rng(seed)
    matcher = _GtMatcher(gt, k)
    ap = 0.0
    f1 = 0.0
    for _ in range(trials):
        hit = rng.integers(len(dst_pix), size=len(src_pix))
        score = rng.uniform(-1.0, 1.0, size=len(src_pix))
        order = rank_pairs(src_pix, dst_pix[hit], np.zeros(len(src_pix)), score)
        matched = matcher.match(src_pix[order], dst_pix[hit][order])
        out = pr_sweep(matched, len(gt), t_grid)
        ap += out["ap"] / trials
        f1 += out["best_f1"] / trials
    return {"ap": ap, "best_f1": f1}
