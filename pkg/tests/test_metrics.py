"""Label-transfer and discovery metrics, greedy GT matching, mask IoU."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcorr.camera import CorrespondenceSet, RigidTransform
from funcorr.evaluation import oracle_embedded, random_embedded
from funcorr.groundtruth import Alignment, derive_gt
from funcorr.metrics import (
    EmbeddedView,
    MetricsError,
    _greedy_gt_match,
    chance_discovery,
    chance_label_transfer,
    discover_pairs,
    discovery,
    label_transfer_metrics,
    mask_iou,
    pr_from_points,
    pr_sweep,
    transfer_match,
)
from test_groundtruth import spout_view


def grid_view(n=6, dim=16, seed=0, mask=None):
    if mask is None:
        mask = np.ones((n, n), dtype=bool)
    rows, cols = np.nonzero(mask)
    pixels = np.stack([rows, cols], axis=1)
    emb = np.random.default_rng(seed).normal(size=(len(pixels), dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return EmbeddedView(pixels=pixels, emb=emb, mask=mask)


@pytest.fixture(scope="module")
def oracle_pair():
    """Two spout views, identity alignment, derived GT, oracle embeddings."""
    obj, va, ra = spout_view(az=0.35, size=96, f=128.0)
    _, vb, rb = spout_view(az=0.75, size=96, f=128.0)
    obb = obj.part_regions["pour-with"]
    align = Alignment(transform=RigidTransform(np.eye(4)), obb_a=obb, obb_b=obb, function="pour-with")
    gt, _ = derive_gt(va, vb, align, max_pairs=300)
    return {
        "va": va, "vb": vb, "gt": gt,
        "part_a": ra.part_masks["pour-with"], "part_b": rb.part_masks["pour-with"],
    }


# ---------------------------------------------------------------------------
# transfer_match


def test_transfer_match_identity():
    v = grid_view(seed=1)
    queries = v.pixels[::5]
    assert np.array_equal(transfer_match(v, v, queries), queries)


def test_transfer_match_tie_breaks_to_lowest_pixel():
    src = grid_view(seed=2)
    flat = np.tile(np.eye(16)[0], (len(src.pixels), 1))
    dst = EmbeddedView(pixels=src.pixels, emb=flat, mask=src.mask)
    out = transfer_match(src, dst, src.pixels)
    assert np.array_equal(out, np.tile(dst.pixels[0], (len(src.pixels), 1)))


def test_transfer_match_scale_invariant():
    src = grid_view(seed=3)
    dst = grid_view(seed=4)
    scaled = EmbeddedView(pixels=dst.pixels, emb=7.3 * dst.emb, mask=dst.mask)
    assert np.array_equal(transfer_match(src, dst, src.pixels), transfer_match(src, scaled, src.pixels))


def test_transfer_match_query_outside_mask():
    mask = np.zeros((6, 6), dtype=bool)
    mask[1:5, 1:5] = True
    v = grid_view(mask=mask, seed=5)
    with pytest.raises(MetricsError):
        transfer_match(v, v, np.array([[0, 0]]))


def test_transfer_match_empty_search_region():
    src = grid_view(seed=6)
    pred = np.zeros((6, 6), dtype=bool)
    pred[0, 0] = True
    mask = np.ones((6, 6), dtype=bool)
    mask[0, 0] = False
    rows, cols = np.nonzero(mask)
    pixels = np.stack([rows, cols], axis=1)
    emb = np.random.default_rng(7).normal(size=(len(pixels), 16))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    dst = EmbeddedView(pixels=pixels, emb=emb, mask=mask, pred_part=pred)
    with pytest.raises(MetricsError):
        transfer_match(src, dst, src.pixels[:3])


def test_oracle_embeddings_transfer_within_10px(oracle_pair):
    src = oracle_embedded(oracle_pair["va"], None)
    dst = oracle_embedded(oracle_pair["vb"], None)
    gt = oracle_pair["gt"]
    matches = transfer_match(src, dst, gt.pixels_a)
    d = np.linalg.norm((matches - gt.pixels_b).astype(float), axis=1)
    assert np.mean(d < 10.0) >= 0.9


# ---------------------------------------------------------------------------
# label_transfer_metrics


def test_label_transfer_perfect():
    gt = np.array([[4.0, 4.0], [10.0, 2.0]])
    out = label_transfer_metrics(gt, gt, image_side=56.0)
    assert out["normalized_dist"] == 0.0
    assert out["pck"] == {"23": 1.0, "10": 1.0}


def test_label_transfer_10px_boundary_is_strict():
    gt = np.array([[4.0, 4.0], [10.0, 2.0]])
    out = label_transfer_metrics(gt + [10.0, 0.0], gt, image_side=56.0)
    assert out["pck"]["23"] == 1.0
    assert out["pck"]["10"] == 0.0
    assert out["normalized_dist"] == pytest.approx(10.0 / 56.0, abs=1e-12)


def test_label_transfer_rejects_empty_and_mismatched():
    with pytest.raises(MetricsError):
        label_transfer_metrics(np.zeros((0, 2)), np.zeros((0, 2)), 56.0)
    with pytest.raises(MetricsError):
        label_transfer_metrics(np.zeros((3, 2)), np.zeros((2, 2)), 56.0)


# ---------------------------------------------------------------------------
# PR bookkeeping


def test_pr_from_hand_points():
    out = pr_from_points([(0.5, 1.0), (1.0, 0.5)])
    assert out["ap"] == pytest.approx(0.75, abs=1e-12)
    assert out["best_f1"] == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_pr_identity_point_gives_unit_ap():
    out = pr_from_points([(1.0, 1.0)])
    assert out["ap"] == 1.0 and out["best_f1"] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=200), st.integers(1, 300))
def test_pr_sweep_bounds_and_monotone_recall(flags, extra_gt):
    matched = np.array(flags, dtype=bool)
    n_gt = int(matched.sum()) + extra_gt  # matched pairs never exceed the GT pool
    out = pr_sweep(matched, n_gt)
    recalls = [r for _, _, r in out["curve"]]
    precisions = [p for _, p, _ in out["curve"]]
    assert all(0.0 <= p <= 1.0 for p in precisions)
    assert all(0.0 <= r <= 1.0 for r in recalls)
    assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:]))
    assert -1e-12 <= out["ap"] <= 1.0 + 1e-12
    assert -1e-12 <= out["best_f1"] <= 1.0 + 1e-12


def test_pr_sweep_empty_inputs():
    assert pr_sweep(np.zeros(0, dtype=bool), 5)["ap"] == 0.0
    assert pr_sweep(np.ones(3, dtype=bool), 0)["curve"] == []


# ---------------------------------------------------------------------------
# discovery


def _exact_discovery_setup(n=40, side=32, seed=8):
    rng = np.random.default_rng(seed)
    flat_a = rng.choice(side * side, size=n, replace=False)
    flat_b = rng.choice(side * side, size=n, replace=False)
    pa = np.stack(np.unravel_index(flat_a, (side, side)), axis=1).astype(np.int64)
    pb = np.stack(np.unravel_index(flat_b, (side, side)), axis=1).astype(np.int64)
    mask_a = np.zeros((side, side), dtype=bool)
    mask_a[pa[:, 0], pa[:, 1]] = True
    mask_b = np.zeros((side, side), dtype=bool)
    mask_b[pb[:, 0], pb[:, 1]] = True
    eye = np.eye(n)
    # EmbeddedView keeps pixels row-major via its own indexing, so permute
    # the identity embeddings to follow each view's pixel order
    order_a = np.lexsort((pa[:, 1], pa[:, 0]))
    order_b = np.lexsort((pb[:, 1], pb[:, 0]))
    src = EmbeddedView(pixels=pa[order_a], emb=eye[order_a], mask=mask_a)
    dst = EmbeddedView(pixels=pb[order_b], emb=eye[order_b], mask=mask_b)
    gt = CorrespondenceSet(pixels_a=pa, pixels_b=pb)
    return src, dst, gt


def test_discovery_of_exact_gt_is_perfect():
    src, dst, gt = _exact_discovery_setup()
    out = discovery(src, dst, gt, k=1.0)
    assert out["ap"] == pytest.approx(1.0, abs=1e-12)
    assert out["best_f1"] == pytest.approx(1.0, abs=1e-12)
    assert any(p == 1.0 and r == 1.0 for _, p, r in out["curve"])
    assert out["n_discovered"] == len(gt)


def test_discovery_scores_bounded(oracle_pair):
    src = random_embedded(oracle_pair["va"], seed=3)
    dst = random_embedded(oracle_pair["vb"], seed=4)
    _, _, scores = discover_pairs(src, dst)
    assert len(scores) == int(oracle_pair["va"].mask.sum())
    assert scores.min() >= -1.0 - 1e-12 and scores.max() <= 1.0 + 1e-12


def test_random_embeddings_score_near_chance(oracle_pair):
    src = random_embedded(oracle_pair["va"], seed=3)
    dst = random_embedded(oracle_pair["vb"], seed=4)
    out = discovery(src, dst, oracle_pair["gt"], k=10.0)
    ch = chance_discovery(
        oracle_pair["va"].mask, oracle_pair["vb"].mask, oracle_pair["gt"], 10.0, trials=100, seed=0
    )
    assert 0.5 * ch["ap"] <= out["ap"] <= 1.5 * ch["ap"]


def test_mask_restriction_does_not_hurt_oracle(oracle_pair):
    plain_src = oracle_embedded(oracle_pair["va"], None)
    plain_dst = oracle_embedded(oracle_pair["vb"], None)
    masked_src = oracle_embedded(oracle_pair["va"], None, pred_part=oracle_pair["part_a"])
    masked_dst = oracle_embedded(oracle_pair["vb"], None, pred_part=oracle_pair["part_b"])
    gt = oracle_pair["gt"]
    plain = discovery(plain_src, plain_dst, gt, k=10.0)
    masked = discovery(masked_src, masked_dst, gt, k=10.0)
    assert masked["ap"] + 1e-12 >= plain["ap"]


def test_discovery_invariant_to_pixel_enumeration():
    src, dst, gt = _exact_discovery_setup(n=25, seed=9)
    perm = np.random.default_rng(10).permutation(len(dst.pixels))
    shuffled = EmbeddedView(pixels=dst.pixels[perm], emb=dst.emb[perm], mask=dst.mask)
    a = discovery(src, dst, gt, k=2.0)
    b = discovery(src, shuffled, gt, k=2.0)
    assert a["ap"] == b["ap"] and a["best_f1"] == b["best_f1"]


def test_discovery_rejects_empty_gt_and_grid():
    src, dst, gt = _exact_discovery_setup(n=10, seed=11)
    empty = CorrespondenceSet(pixels_a=np.zeros((0, 2), dtype=np.int64), pixels_b=np.zeros((0, 2), dtype=np.int64))
    with pytest.raises(MetricsError):
        discovery(src, dst, empty, k=5.0)
    with pytest.raises(MetricsError):
        discovery(src, dst, gt, k=5.0, t_grid=())
    with pytest.raises(MetricsError):
        discovery(src, dst, gt, k=5.0, rank_by="weird")


# ---------------------------------------------------------------------------
# greedy GT matching


def _brute_greedy(p1, p2, gt, k):
    kk = k * k
    g1 = gt.pixels_a.astype(float)
    g2 = gt.pixels_b.astype(float)
    consumed = np.zeros(len(g1), dtype=bool)
    out = np.zeros(len(p1), dtype=bool)
    for i in range(len(p1)):
        best = None
        for j in range(len(g1)):
            if consumed[j]:
                continue
            d1 = np.sum((p1[i] - g1[j]) ** 2)
            d2 = np.sum((p2[i] - g2[j]) ** 2)
            if d1 <= kk and d2 <= kk:
                w = max(d1, d2)
                if best is None or w < best[0] or (w == best[0] and j < best[1]):
                    best = (w, j)
        if best is not None:
            consumed[best[1]] = True
            out[i] = True
    return out


def test_greedy_gt_match_agrees_with_brute_force():
    rng = np.random.default_rng(12)
    for trial in range(30):
        n_pairs = int(rng.integers(1, 60))
        n_gt = int(rng.integers(1, 40))
        p1 = rng.integers(0, 40, size=(n_pairs, 2))
        p2 = rng.integers(0, 40, size=(n_pairs, 2))
        gt = CorrespondenceSet(
            pixels_a=rng.integers(0, 40, size=(n_gt, 2)),
            pixels_b=rng.integers(0, 40, size=(n_gt, 2)),
        )
        k = float(rng.choice([1.0, 2.5, 7.0]))
        got = _greedy_gt_match(p1, p2, gt, k)
        assert np.array_equal(got, _brute_greedy(p1, p2, gt, k)), f"trial {trial} k={k}"


# ---------------------------------------------------------------------------
# mask IoU and chance helpers


def test_mask_iou_values():
    a = np.zeros((10, 10), dtype=bool)
    a[:5] = True
    full = np.ones((10, 10), dtype=bool)
    assert mask_iou(full, full) == 1.0
    assert mask_iou(a, ~a) == 0.0
    assert mask_iou(a, full) == 0.5
    assert mask_iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 4), dtype=bool)) == 1.0
    with pytest.raises(MetricsError):
        mask_iou(np.zeros((3, 3), dtype=bool), np.zeros((4, 4), dtype=bool))


def test_chance_label_transfer_rejects_empty_mask():
    gt = CorrespondenceSet(pixels_a=np.zeros((2, 2), dtype=np.int64), pixels_b=np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(MetricsError):
        chance_label_transfer(np.zeros((5, 5), dtype=bool), gt, 5.0)


def test_embedded_view_validation(caplog):
    mask = np.ones((4, 4), dtype=bool)
    pix = np.stack(np.nonzero(mask), axis=1)
    with pytest.raises(MetricsError):
        EmbeddedView(pixels=pix, emb=np.zeros((3, 8)), mask=mask)
    with pytest.raises(MetricsError):
        EmbeddedView(pixels=pix, emb=np.zeros((16, 8)), mask=mask, pred_part=np.zeros((5, 5), dtype=bool))
    with caplog.at_level(logging.WARNING, logger="funcorr.metrics"):
        v = EmbeddedView(pixels=pix, emb=np.zeros((16, 8)), mask=mask, pred_part=np.zeros((4, 4), dtype=bool))
    assert v.pred_part is None
    assert any("empty predicted part" in r.message for r in caplog.records)
