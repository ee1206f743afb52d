"""Training loop: pair sampling, total loss, hand-derived gradient, Adam.

A batch is a list of pair samples. Each sample picks a function, two objects
sharing it, and two views per object; the functional quadruples come from the
first view of each object (positives on the part mask, negatives on the rest
of the object), the multi-view spatial pairs come from each object's own view
pair, and the mask head trains on the same labeled points. Pairs that cannot
supply enough points are skipped with a logged warning.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..camera import CameraView, multiview_pairs
from ..tensor_store import read_tensor, write_tensor
from .losses import func_rows, mask_rows, spatial_rows_inbatch
from .model import (
    EmbeddingError,
    ModelConfig,
    check_finite,
    embed_backward,
    embed_pixels,
    init_params,
    zero_grads,
)

logger = logging.getLogger(__name__)

SPATIAL_SAMPLING = ("functional_part", "whole_object")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    batch_pairs: int = 50
    points_per_image: int = 128
    lambda_spatial: float = 10.0
    lambda_mask: float = 1.0
    tau: float = 0.07
    seed: int = 0
    spatial_sampling: str = "functional_part"
    use_func_loss: bool = True

    def __post_init__(self):
        if self.spatial_sampling not in SPATIAL_SAMPLING:
            raise EmbeddingError(f"spatial_sampling must be one of {SPATIAL_SAMPLING}")
        if self.tau <= 0:
            raise EmbeddingError("tau must be positive")
        if self.points_per_image < 2:
            raise EmbeddingError("points_per_image must be >= 2")


@dataclass
class LoadedView:
    """One view held in memory for training."""

    blocks: np.ndarray              # (3, gh, gw, C) float64
    stride: int
    view: CameraView
    part_masks: dict[str, np.ndarray]


@dataclass
class TrainObject:
    object_id: str
    functions: list[str]
    views: list[LoadedView]


@dataclass
class TrainingData:
    objects: list[TrainObject]
    function_vectors: dict[str, np.ndarray]
    _corr_cache: dict = field(default_factory=dict)

    def multiview(self, obj_idx: int, vi: int, vj: int):
        key = (obj_idx, vi, vj)
        if key not in self._corr_cache:
            views = self.objects[obj_idx].views
            self._corr_cache[key] = multiview_pairs(views[vi].view, views[vj].view)
        return self._corr_cache[key]


@dataclass
class PairSample:
    fn_vec: np.ndarray
    view_1: LoadedView
    view_2: LoadedView
    pos_1: np.ndarray
    neg_1: np.ndarray
    pos_2: np.ndarray
    neg_2: np.ndarray
    # (src_view, src_pixels, dst_view, dst_pixels) per object
    spatial: list[tuple[LoadedView, np.ndarray, LoadedView, np.ndarray]]


def _sample_pixels(rng: np.random.Generator, mask: np.ndarray, n: int) -> np.ndarray | None:
    rows, cols = np.nonzero(mask)
    if rows.size < n:
        return None
    idx = rng.choice(rows.size, size=n, replace=False)
    return np.stack([rows[idx], cols[idx]], axis=1)


def sample_batch(data: TrainingData, cfg: TrainConfig, rng: np.random.Generator) -> list[PairSample]:
    """Draw up to cfg.batch_pairs pair samples; under-supplied pairs are skipped."""
    fn_objects: dict[str, list[int]] = {}
    for idx, obj in enumerate(data.objects):
        for fn in obj.functions:
            if fn in data.function_vectors:
                fn_objects.setdefault(fn, []).append(idx)
    functions = sorted(fn for fn, objs in fn_objects.items() if len(objs) >= 2)
    if not functions:
        raise EmbeddingError("no function is shared by at least two objects")

    batch: list[PairSample] = []
    attempts = 0
    max_attempts = cfg.batch_pairs * 8
    while len(batch) < cfg.batch_pairs and attempts < max_attempts:
        attempts += 1
        fn = functions[rng.integers(len(functions))]
        cand = fn_objects[fn]
        ia, ib = rng.choice(len(cand), size=2, replace=False)
        sample = _sample_pair(data, cfg, rng, fn, cand[ia], cand[ib])
        if sample is not None:
            batch.append(sample)
    if len(batch) < cfg.batch_pairs:
        logger.warning("batch underfilled: %d of %d pairs", len(batch), cfg.batch_pairs)
    return batch


def _sample_pair(
    data: TrainingData,
    cfg: TrainConfig,
    rng: np.random.Generator,
    fn: str,
    obj_a: int,
    obj_b: int,
) -> PairSample | None:
    need_spatial = cfg.lambda_spatial != 0.0
    n = cfg.points_per_image
    picks = []
    for obj_idx in (obj_a, obj_b):
        obj = data.objects[obj_idx]
        if len(obj.views) < (2 if need_spatial else 1):
            logger.warning("object %s has too few views; pair skipped", obj.object_id)
            return None
        if need_spatial:
            vi, vj = rng.choice(len(obj.views), size=2, replace=False)
        else:
            vi, vj = int(rng.integers(len(obj.views))), 0
        view1 = obj.views[vi]
        part = view1.part_masks.get(fn)
        if part is None:
            logger.warning("object %s lacks a %r part mask; pair skipped", obj.object_id, fn)
            return None
        pos = _sample_pixels(rng, part & view1.view.mask, n)
        neg = _sample_pixels(rng, view1.view.mask & ~part, n)
        if pos is None or neg is None:
            logger.warning(
                "object %s view %d: fewer than %d part or non-part pixels; pair skipped",
                obj.object_id, vi, n,
            )
            return None
        spatial = None
        if need_spatial:
            corr = data.multiview(obj_idx, vi, vj)
            pa, pb = corr.pixels_a, corr.pixels_b
            if cfg.spatial_sampling == "functional_part":
                keep = part[pa[:, 0], pa[:, 1]]
                pa, pb = pa[keep], pb[keep]
            if len(pa) < n:
                logger.warning(
                    "object %s views (%d, %d): %d multi-view pairs < %d; pair skipped",
                    obj.object_id, vi, vj, len(pa), n,
                )
                return None
            sel = rng.choice(len(pa), size=n, replace=False)
            spatial = (view1, pa[sel], obj.views[vj], pb[sel])
        picks.append((view1, pos, neg, spatial))

    (v1, pos1, neg1, sp1), (v2, pos2, neg2, sp2) = picks
    return PairSample(
        fn_vec=data.function_vectors[fn],
        view_1=v1, view_2=v2,
        pos_1=pos1, neg_1=neg1, pos_2=pos2, neg_2=neg2,
        spatial=[s for s in (sp1, sp2) if s is not None],
    )


def _evaluate_batch(
    params: dict[str, np.ndarray],
    batch: list[PairSample],
    cfg: TrainConfig,
    with_grad: bool,
) -> tuple[float, dict[str, float], dict[str, np.ndarray] | None]:
    if not batch:
        raise EmbeddingError("empty batch")
    check_finite(params)
    mask_on = "mask_w" in params
    grads = zero_grads(params) if with_grad else None

    # forward everything first, keeping per-call caches and row counts
    calls = []  # (cache, slot) per embed call
    func_groups = []
    spatial_groups = []
    mask_chunks = []

    for pair in batch:
        if cfg.use_func_loss or mask_on:
            enc = {}
            for name, view, pix in (
                ("p1", pair.view_1, pair.pos_1),
                ("n1", pair.view_1, pair.neg_1),
                ("p2", pair.view_2, pair.pos_2),
                ("n2", pair.view_2, pair.neg_2),
            ):
                emb, ml, cache = embed_pixels(view.blocks, pix, pair.fn_vec, params, view.stride)
                enc[name] = {"emb": emb, "ml": ml, "cache": cache, "d_emb": np.zeros_like(emb)}
            if cfg.use_func_loss:
                func_groups.append(enc)
            if mask_on:
                for name, label in (("p1", 1.0), ("n1", 0.0), ("p2", 1.0), ("n2", 0.0)):
                    mask_chunks.append((enc[name], np.full(len(enc[name]["ml"]), label)))
            calls.extend(enc.values())
        for src_view, src_pix, dst_view, dst_pix in pair.spatial:
            es, _, cs = embed_pixels(src_view.blocks, src_pix, pair.fn_vec, params, src_view.stride)
            ed, _, cd = embed_pixels(dst_view.blocks, dst_pix, pair.fn_vec, params, dst_view.stride)
            a = {"emb": es, "cache": cs, "d_emb": np.zeros_like(es), "ml": None}
            b = {"emb": ed, "cache": cd, "d_emb": np.zeros_like(ed), "ml": None}
            spatial_groups.append((a, b))
            calls.extend((a, b))

    # losses (sum-reduced rows, rescaled by total counts)
    l_func = 0.0
    n_func = sum(len(g["p1"]["emb"]) for g in func_groups)
    for g in func_groups:
        rows, (d1p, d1n, d2p, d2n) = func_rows(
            g["p1"]["emb"], g["n1"]["emb"], g["p2"]["emb"], g["n2"]["emb"], cfg.tau
        )
        l_func += rows.sum()
        if with_grad:
            g["p1"]["d_emb"] += d1p / n_func
            g["n1"]["d_emb"] += d1n / n_func
            g["p2"]["d_emb"] += d2p / n_func
            g["n2"]["d_emb"] += d2n / n_func
    l_func = l_func / n_func if n_func else 0.0

    l_spatial = 0.0
    n_spatial = sum(len(a["emb"]) for a, _ in spatial_groups)
    for a, b in spatial_groups:
        rows, d_src, d_dst = spatial_rows_inbatch(a["emb"], b["emb"], cfg.tau)
        l_spatial += rows.sum()
        if with_grad:
            a["d_emb"] += cfg.lambda_spatial * d_src / n_spatial
            b["d_emb"] += cfg.lambda_spatial * d_dst / n_spatial
    l_spatial = l_spatial / n_spatial if n_spatial else 0.0

    l_mask = 0.0
    n_mask = sum(len(c["ml"]) for c, _ in mask_chunks)
    for c, labels in mask_chunks:
        rows, d_logits = mask_rows(c["ml"], labels)
        l_mask += rows.sum()
        c["d_ml"] = cfg.lambda_mask * d_logits / n_mask if with_grad else None
    l_mask = l_mask / n_mask if n_mask else 0.0

    total = l_func + cfg.lambda_spatial * l_spatial + cfg.lambda_mask * l_mask
    comps = {"loss_func": float(l_func), "loss_spatial": float(l_spatial), "loss_mask": float(l_mask), "total": float(total)}

    if with_grad:
        for c in calls:
            embed_backward(c["cache"], c["d_emb"], c.get("d_ml"), params, grads)
        check_finite(grads, what="gradient for")
    return float(total), comps, grads


def total_loss(
    params: dict[str, np.ndarray], batch: list[PairSample], cfg: TrainConfig
) -> tuple[float, dict[str, float]]:
    total, comps, _ = _evaluate_batch(params, batch, cfg, with_grad=False)
    return total, comps


def grad(
    params: dict[str, np.ndarray], batch: list[PairSample], cfg: TrainConfig
) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    total, comps, grads = _evaluate_batch(params, batch, cfg, with_grad=True)
    return total, comps, grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def init(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(m=zero_grads(params), v=zero_grads(params), t=0)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; mutates state, returns new params."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise EmbeddingError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
    state.t += 1
    t = state.t
    out = {}
    for k, g in grads.items():
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = state.m[k] / (1 - beta1**t)
        v_hat = state.v[k] / (1 - beta2**t)
        out[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---------------------------------------------------------------------------
# loop


def train(
    data: TrainingData,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
) -> tuple[dict[str, np.ndarray], list[dict[str, float]]]:
    """Run cfg.epochs optimization steps, one freshly sampled batch per epoch.

    Deterministic in cfg.seed. Returns final params and the per-epoch loss
    curve (epoch, loss_func, loss_spatial, loss_mask, total).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, 0x7E41]))
    params = init_params(model_cfg, seed=cfg.seed)
    state = AdamState.init(params)
    curve = []
    for epoch in range(cfg.epochs):
        batch = sample_batch(data, cfg, rng)
        if not batch:
            logger.warning("epoch %d: no usable pairs, skipping step", epoch)
            curve.append({"epoch": epoch, "loss_func": 0.0, "loss_spatial": 0.0, "loss_mask": 0.0, "total": 0.0})
            continue
        total, comps, grads = grad(params, batch, cfg)
        params = adam_step(params, grads, state, cfg.lr)
        row = {"epoch": epoch, **comps}
        curve.append(row)
        if epoch % max(1, cfg.epochs // 10) == 0:
            logger.info("epoch %d: total %.4f (func %.4f spatial %.4f mask %.4f)",
                        epoch, total, comps["loss_func"], comps["loss_spatial"], comps["loss_mask"])
    return params, curve


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    out_dir: str | Path,
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"tensors": {}, "model": model_cfg.to_dict()}
    for k in sorted(params):
        rel = f"param_{k}.dftc"
        write_tensor(np.asarray(params[k], dtype=np.float64), out / rel)
        index["tensors"][k] = rel
    with open(out / "params.json", "w") as f:
        json.dump(index, f, indent=2, sort_keys=True)
        f.write("\n")
    if train_cfg is not None:
        with open(out / "config.json", "w") as f:
            json.dump(asdict(train_cfg), f, indent=2, sort_keys=True)
            f.write("\n")


def load_checkpoint(ckpt_dir: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    ckpt = Path(ckpt_dir)
    index_path = ckpt / "params.json"
    if not index_path.exists():
        raise EmbeddingError(f"not a checkpoint directory (no params.json): {ckpt}")
    with open(index_path) as f:
        index = json.load(f)
    params = {k: read_tensor(ckpt / rel) for k, rel in index["tensors"].items()}
    check_finite(params)
    return params, ModelConfig.from_dict(index["model"])
