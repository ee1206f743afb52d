"""Command-line pipeline driver.

Subcommands: gen-scenes, pseudolabel, derive-gt, train, eval, render. Every
command is deterministic in (inputs, seed); reruns write byte-identical
artifacts. Failures print one structured line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from .camera import CameraView, CorrespondenceSet, Obb, RigidTransform
from .embedding.model import ModelConfig
from .embedding.training import (
    TrainConfig,
    TrainingData,
    TrainObject,
    LoadedView,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .evaluation import (
    EvalPair,
    aggregate_metrics,
    chance_for_pair,
    embedded_from_params,
    evaluate_pair,
    evaluate_pairs,
    oracle_embedded,
    random_embedded,
)
from .groundtruth import Alignment, derive_gt, rank_views_by_part
from .metrics import EmbeddedView, mask_iou
from .pseudolabel import (
    ScoredPointCloud,
    accumulate_votes,
    edge_modulate,
    extract_mask,
    load_detections,
    otsu_threshold,
)
from .tensor_store import DatasetManifest, load_manifest, read_tensor, write_tensor
from .viz import draw_matches, save_png, transfer_heat

logger = logging.getLogger("funcorr")

DEFAULT_FUNCTIONS = ["pour-with", "hang-onto", "press-with"]


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# manifest loading helpers


def _views_of(manifest: DatasetManifest, obj) -> list[CameraView]:
    return [ds.load_camera_view(manifest, v) for v in obj.views]


def _loaded_views(manifest: DatasetManifest, obj) -> list[LoadedView]:
    out = []
    for v in obj.views:
        cam_view = ds.load_camera_view(manifest, v)
        blocks = ds.load_feature_blocks(manifest, v)
        gh = blocks.shape[1]
        h = cam_view.depth.shape[0]
        if h % gh:
            raise CliError(f"feature grid {gh} does not divide image height {h}")
        out.append(
            LoadedView(
                blocks=blocks,
                stride=h // gh,
                view=cam_view,
                part_masks=ds.load_part_masks(manifest, v),
            )
        )
    return out


def _training_data(manifest: DatasetManifest) -> TrainingData:
    objects = [
        TrainObject(object_id=o.object_id, functions=list(o.functions), views=_loaded_views(manifest, o))
        for o in manifest.objects
    ]
    vectors = {fn: ds.load_function_vector(manifest, fn) for fn in manifest.function_embeddings}
    return TrainingData(objects=objects, function_vectors=vectors)


def _alignment_from_record(rec) -> Alignment:
    t = RigidTransform(matrix=np.asarray(rec.transform, dtype=np.float64).reshape(4, 4))
    return Alignment(
        transform=t,
        obb_a=Obb.from_dict(rec.obb_a),
        obb_b=Obb.from_dict(rec.obb_b),
        function=rec.function,
    )


def _cross_select(
    views_a: list[CameraView],
    views_b: list[CameraView],
    align: Alignment,
    top_k: int,
    pool: int,
    trials: int,
    seed: int,
) -> list[tuple[int, int]]:
    """Trial view pairs for a cross-object alignment: each side ranked by its
    own part visibility, draws zipped from the two top-k lists."""
    pairs = []
    tops = []
    for views, obb in ((views_a, align.obb_a), (views_b, align.obb_b)):
        order, counts = rank_views_by_part(views, obb, pool=min(pool, len(views)))
        top = [i for i in order[:top_k] if counts[i] > 0]
        if not top:
            raise CliError("functional part is not visible in any pooled view")
        tops.append(top)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x6714]))
    for _ in range(trials):
        pairs.append((tops[0][rng.integers(len(tops[0]))], tops[1][rng.integers(len(tops[1]))]))
    return pairs


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scenes(args) -> None:
    functions = [f.strip() for f in args.functions.split(",") if f.strip()]
    ds.build_dataset(
        out_dir=args.out,
        n_objects=args.objects,
        functions=functions,
        views_per_object=args.views,
        seed=args.seed,
        image_size=args.image_size,
        channels=args.channels,
        cloud_points=args.cloud_points,
        pair_mode=args.pair_mode,
        shape_jitter=args.shape_jitter,
    )
    print(f"wrote manifest to {Path(args.out) / 'manifest.json'}")


def cmd_pseudolabel(args) -> None:
    manifest = load_manifest(args.manifest)
    obj = manifest.object_by_id(args.object) if args.object else manifest.objects[0]
    if obj.surface_points is None:
        raise CliError(f"object {obj.object_id} has no surface point cloud")
    points = read_tensor(manifest.resolve(obj.surface_points)).astype(np.float64)
    views = _views_of(manifest, obj)
    detections = load_detections(args.detections)
    if not detections:
        logger.warning("no detections in %s; emitting all-zero masks", args.detections)

    cloud = accumulate_votes(points, views, detections)
    if args.edge_probs:
        probs = read_tensor(Path(args.edge_probs)).astype(np.float64)
        cloud = ScoredPointCloud(points=cloud.points, scores=edge_modulate(cloud.scores, probs))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(cloud.points.astype(np.float32), out / "points.dftc")
    write_tensor(cloud.scores.astype(np.float32), out / "scores.dftc")

    summary = {"object_id": obj.object_id, "n_detections": len(detections), "views": len(views)}
    if cloud.scores.max() > 0:
        threshold = otsu_threshold(cloud.scores)
        summary["threshold"] = threshold
        masks = [extract_mask(cloud, v, threshold) for v in views]
    else:
        summary["threshold"] = None
        masks = [np.zeros_like(v.mask) for v in views]
    ious = []
    for j, m in enumerate(masks):
        write_tensor(m.astype(np.uint8), out / f"mask_v{j:02d}.dftc")
        if args.function and args.function in obj.views[j].part_masks:
            ref = read_tensor(manifest.resolve(obj.views[j].part_masks[args.function])).astype(bool)
            ious.append(mask_iou(m, ref))
    if ious:
        summary["iou_vs_part"] = {"per_view": ious, "mean": float(np.mean(ious))}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"labeled {len(views)} views of {obj.object_id} -> {out}")


def _derive_records(manifest: DatasetManifest, args) -> tuple[list[dict], dict[str, CorrespondenceSet]]:
    """GT for every alignment record; returns (index rows, pair_id -> pairs)."""
    if not manifest.alignments:
        raise CliError("manifest has no alignment records; nothing to derive")
    view_cache: dict[str, list[CameraView]] = {}

    def views_for(object_id: str) -> list[CameraView]:
        if object_id not in view_cache:
            view_cache[object_id] = _views_of(manifest, manifest.object_by_id(object_id))
        return view_cache[object_id]

    rows: list[dict] = []
    corr: dict[str, CorrespondenceSet] = {}
    for ai, rec in enumerate(manifest.alignments):
        align = _alignment_from_record(rec)
        va, vb = views_for(rec.object_id_a), views_for(rec.object_id_b)
        trial_pairs = _cross_select(va, vb, align, args.top_k, args.pool, args.trials, args.seed + ai)
        for ti, (ia, ib) in enumerate(trial_pairs):
            pairs, info = derive_gt(va[ia], vb[ib], align, max_pairs=args.gt_points)
            if args.max_residual is not None and info["residual_mean"] > args.max_residual:
                logger.warning(
                    "alignment %d trial %d: residual %.4f exceeds %.4f, dropped",
                    ai, ti, info["residual_mean"], args.max_residual,
                )
                continue
            pair_id = f"a{ai:03d}_t{ti}"
            rows.append(
                {
                    "pair_id": pair_id,
                    "alignment": ai,
                    "object_id_a": rec.object_id_a,
                    "object_id_b": rec.object_id_b,
                    "function": rec.function,
                    "view_a": int(ia),
                    "view_b": int(ib),
                    "residual_mean": info["residual_mean"],
                    "pairs": info["pairs"],
                }
            )
            corr[pair_id] = pairs
    return rows, corr


def cmd_derive_gt(args) -> None:
    manifest = load_manifest(args.manifest)
    rows, corr = _derive_records(manifest, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for row in rows:
        rel = f"gt_{row['pair_id']}.dftc"
        c = corr[row["pair_id"]]
        write_tensor(np.concatenate([c.pixels_a, c.pixels_b], axis=1).astype(np.int64), out / rel)
        row["file"] = rel
    with open(out / "index.json", "w") as f:
        json.dump({"pairs": rows}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"derived {len(rows)} GT pair files -> {out}")


def _train_config(args) -> TrainConfig:
    base = {
        "epochs": 100,
        "lr": 1e-4,
        "batch_pairs": 50,
        "points_per_image": 128,
        "lambda_spatial": 10.0,
        "lambda_mask": 1.0,
        "tau": 0.07,
        "spatial_sampling": "functional_part",
        "use_func_loss": True,
    }
    if args.preset == "spatial-only":
        base["use_func_loss"] = False
    elif args.preset == "functional-only":
        base["lambda_spatial"] = 0.0
    overrides = {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_pairs": args.batch_pairs,
        "points_per_image": args.points,
        "lambda_spatial": args.lambda_spatial,
        "lambda_mask": args.lambda_mask,
        "tau": args.tau,
    }
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    if args.spatial_sampling is not None:
        base["spatial_sampling"] = {"part": "functional_part", "object": "whole_object"}[args.spatial_sampling]
    return TrainConfig(seed=args.seed, **base)


def cmd_train(args) -> None:
    manifest = load_manifest(args.manifest)
    data = _training_data(manifest)
    cfg = _train_config(args)
    first = data.objects[0].views[0]
    c_text = len(next(iter(data.function_vectors.values())))
    model_cfg = ModelConfig(
        c_img=first.blocks.shape[-1],
        c_text=c_text,
        hidden=args.hidden,
        embed_dim=args.embed_dim,
        mask_head=args.mask_head == "on",
    )
    params, curve = train(data, cfg, model_cfg)
    out = Path(args.out)
    save_checkpoint(out, params, model_cfg, cfg)
    with open(out / "loss.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "loss_func", "loss_spatial", "loss_mask", "total"])
        writer.writeheader()
        writer.writerows(curve)
    print(f"trained {cfg.epochs} epochs -> {out}")


def _eval_pairs(manifest: DatasetManifest, args) -> list[EvalPair]:
    if args.gt:
        with open(Path(args.gt) / "index.json") as f:
            rows = json.load(f)["pairs"]
        corr = {}
        for row in rows:
            arr = read_tensor(Path(args.gt) / row["file"])
            corr[row["pair_id"]] = CorrespondenceSet(pixels_a=arr[:, :2], pixels_b=arr[:, 2:])
    else:
        rows, corr = _derive_records(manifest, args)

    feat_cache: dict[str, tuple] = {}

    def features_for(object_id: str):
        if object_id not in feat_cache:
            obj = manifest.object_by_id(object_id)
            feat_cache[object_id] = (obj, _loaded_views(manifest, obj))
        return feat_cache[object_id]

    pairs = []
    for row in rows:
        obj_a, views_a = features_for(row["object_id_a"])
        obj_b, views_b = features_for(row["object_id_b"])
        la, lb = views_a[row["view_a"]], views_b[row["view_b"]]
        rec = manifest.alignments[row["alignment"]]
        align = _alignment_from_record(rec)
        fn = row["function"]
        pairs.append(
            EvalPair(
                pair_id=row["pair_id"],
                function=fn,
                view_a=la.view,
                view_b=lb.view,
                blocks_a=la.blocks,
                blocks_b=lb.blocks,
                stride=la.stride,
                fn_vec=ds.load_function_vector(manifest, fn) if fn in manifest.function_embeddings else None,
                gt=corr[row["pair_id"]],
                transform_b_to_a=align.transform,
                part_mask_a=la.part_masks.get(fn),
                part_mask_b=lb.part_masks.get(fn),
            )
        )
    if args.max_pairs is not None:
        pairs = pairs[: args.max_pairs]
    if not pairs:
        raise CliError("no GT pairs to evaluate")
    return pairs


def _embed_pair(pair: EvalPair, args, params, model_cfg):
    mode = args.embeddings
    pred = args.pred_masks
    if mode == "oracle":
        if pred == "auto":
            pred = "gt"
        ident = RigidTransform.identity()
        t_a, t_b = ident, pair.transform_b_to_a or ident
        src = oracle_embedded(pair.view_a, t_a, seed=args.seed,
                              pred_part=pair.part_mask_a if pred == "gt" else None)
        dst = oracle_embedded(pair.view_b, t_b, seed=args.seed,
                              pred_part=pair.part_mask_b if pred == "gt" else None)
        return src, dst
    if mode == "random":
        h = zlib.crc32(pair.pair_id.encode()) & 0xFFFF
        return (
            random_embedded(pair.view_a, seed=args.seed * 2 + h),
            random_embedded(pair.view_b, seed=args.seed * 2 + h + 1),
        )
    if pair.fn_vec is None:
        raise CliError(f"pair {pair.pair_id}: no function embedding for {pair.function!r}")
    use_pred = pred == "auto" and model_cfg.mask_head
    src = embedded_from_params(params, model_cfg, pair.blocks_a, pair.stride, pair.fn_vec,
                               pair.view_a.mask, use_pred_mask=use_pred)
    dst = embedded_from_params(params, model_cfg, pair.blocks_b, pair.stride, pair.fn_vec,
                               pair.view_b.mask, use_pred_mask=use_pred)
    if pred == "gt":
        # rebuild so pred_part passes the usual validation
        src = EmbeddedView(pixels=src.pixels, emb=src.emb, mask=src.mask, pred_part=pair.part_mask_a)
        dst = EmbeddedView(pixels=dst.pixels, emb=dst.emb, mask=dst.mask, pred_part=pair.part_mask_b)
    return src, dst


def cmd_eval(args) -> None:
    manifest = load_manifest(args.manifest)
    pairs = _eval_pairs(manifest, args)
    ks = tuple(float(k) for k in args.k.split(","))
    params = model_cfg = None
    if args.embeddings not in ("oracle", "random"):
        params, model_cfg = load_checkpoint(args.embeddings)

    out = Path(args.out)
    (out / "matches").mkdir(parents=True, exist_ok=True)

    def worker(pair: EvalPair) -> dict:
        src, dst = _embed_pair(pair, args, params, model_cfg)
        return evaluate_pair(src, dst, pair, ks, rank_by=args.rank_by, keep_matches=args.keep_matches)

    per_pair = evaluate_pairs(pairs, worker, threads=args.threads)
    for row in per_pair:
        matches = row.pop("_matches", None)
        if matches is not None:
            write_tensor(np.asarray(matches, dtype=np.float64), out / "matches" / f"{row['pair_id']}.dftc")

    agg = aggregate_metrics(per_pair, ks)
    with open(out / "per_pair.json", "w") as f:
        json.dump(per_pair, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "aggregate.json", "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "per_pair.csv", "w", newline="") as f:
        writer = csv.writer(f)
        header = ["pair_id", "function", "normalized_dist"]
        header += [f"pck@{int(k)}p" for k in ks] + [f"ap@{int(k)}p" for k in ks] + [f"best_f1@{int(k)}p" for k in ks]
        writer.writerow(header)
        for row in per_pair:
            line = [row["pair_id"], row["function"], row["normalized_dist"]]
            line += [row["pck"][str(int(k))] for k in ks]
            line += [row["ap"][str(int(k))] for k in ks]
            line += [row["best_f1"][str(int(k))] for k in ks]
            writer.writerow(line)

    if args.chance:
        chance_rows = [chance_for_pair(p, ks, trials=args.chance_trials, seed=args.seed) for p in pairs]
        with open(out / "chance.json", "w") as f:
            json.dump({"per_pair": chance_rows, "aggregate": aggregate_metrics(
                [dict(r, pair_id=p.pair_id, function=p.function) for r, p in zip(chance_rows, pairs)], ks)},
                f, indent=2, sort_keys=True)
            f.write("\n")

    keys = ", ".join(f"{k}={agg[k]:.4f}" for k in sorted(agg) if k != "pairs")
    print(f"evaluated {agg['pairs']} pairs: {keys}")


def cmd_render(args) -> None:
    manifest = load_manifest(args.manifest)
    with open(Path(args.gt) / "index.json") as f:
        rows = {r["pair_id"]: r for r in json.load(f)["pairs"]}
    if args.pair not in rows:
        raise CliError(f"unknown pair id {args.pair!r}; {len(rows)} pairs in {args.gt}")
    row = rows[args.pair]
    obj_a = manifest.object_by_id(row["object_id_a"])
    obj_b = manifest.object_by_id(row["object_id_b"])
    view_a = ds.load_camera_view(manifest, obj_a.views[row["view_a"]])
    view_b = ds.load_camera_view(manifest, obj_b.views[row["view_b"]])

    matches_path = Path(args.eval_dir) / "matches" / f"{args.pair}.dftc"
    if not matches_path.exists():
        raise CliError(f"no saved matches at {matches_path}; run eval with --keep-matches first")
    arr = read_tensor(matches_path)
    p1 = arr[:, 0:2].astype(np.int64)
    p2 = arr[:, 2:4].astype(np.int64)
    scores = arr[:, 4]

    top_img = draw_matches(view_a, view_b, p1, p2, scores, top=args.top)
    heat_img = transfer_heat(view_a, view_b, p1, p2)
    w = max(top_img.width, heat_img.width)
    canvas = np.zeros((top_img.height + 8 + heat_img.height, w, 3), dtype=np.uint8)
    canvas[: top_img.height, : top_img.width] = np.asarray(top_img)
    canvas[top_img.height + 8 :, : heat_img.width] = np.asarray(heat_img)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(Image.fromarray(canvas), out)
    print(f"rendered {args.pair} ({min(args.top, len(p1))} lines) -> {out}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_gt_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trials", type=int, default=6, help="view pairs per alignment")
    p.add_argument("--top-k", type=int, default=5, help="views sampled from the best k")
    p.add_argument("--pool", type=int, default=30, help="ranking pool size (clamped to view count)")
    p.add_argument("--max-residual", type=float, default=None,
                   help="drop pairs whose mean 3D residual exceeds this (meters)")
    p.add_argument("--gt-points", type=int, default=512,
                   help="cap on GT pairs per view pair (assignment is cubic in this)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funcorr", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-scenes", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--functions", default=",".join(DEFAULT_FUNCTIONS))
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--channels", type=int, default=12)
    p.add_argument("--cloud-points", type=int, default=60000)
    p.add_argument("--pair-mode", choices=["ring", "all"], default="ring")
    p.add_argument("--shape-jitter", type=float, default=1.0,
                   help="scale of shape-parameter diversity around range midpoints")
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("pseudolabel", help="aggregate detections into part masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True, help="JSONL: {view, trial, bbox}")
    p.add_argument("--out", required=True)
    p.add_argument("--object", default=None, help="object id (default: first in manifest)")
    p.add_argument("--function", default=None, help="part name for IoU reporting")
    p.add_argument("--edge-probs", default=None, help="per-point edge probabilities (.dftc)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("derive-gt", help="derive GT correspondences for all alignments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_gt_args(p)
    p.set_defaults(func=cmd_derive_gt)

    p = sub.add_parser("train", help="train the correspondence embedding")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-pairs", type=int, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda-spatial", type=float, default=None)
    p.add_argument("--lambda-mask", type=float, default=None)
    p.add_argument("--spatial-sampling", choices=["part", "object"], default=None)
    p.add_argument("--mask-head", choices=["on", "off"], default="on")
    p.add_argument("--preset", choices=["full", "spatial-only", "functional-only"], default="full")
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--embed-dim", type=int, default=256)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score label transfer and discovery")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", required=True,
                   help="checkpoint directory, or 'oracle' / 'random'")
    p.add_argument("--gt", default=None, help="derive-gt output dir (default: derive in-memory)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", default="23,10", help="pixel thresholds, comma separated")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--pred-masks", choices=["auto", "gt", "off"], default="auto")
    p.add_argument("--rank-by", choices=["score", "sim"], default="score")
    p.add_argument("--max-pairs", type=int, default=None)
    p.add_argument("--keep-matches", type=int, default=200,
                   help="ranked matches saved per pair for rendering")
    p.add_argument("--chance", action="store_true", help="also compute random-matching chance levels")
    p.add_argument("--chance-trials", type=int, default=100)
    _add_gt_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw matches for one evaluated pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gt", required=True, help="derive-gt output dir")
    p.add_argument("--eval-dir", required=True, help="eval output dir with matches/")
    p.add_argument("--pair", required=True, help="pair id, e.g. a000_t0")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as e:  # single structured line, nonzero exit
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
