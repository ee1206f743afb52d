"""Synthetic dataset assembly: objects, orbiting cameras, rasters, features,
surface clouds, functional alignments, and the manifest tying them together.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .camera import Camera, CameraView, RigidTransform, look_at_camera
from .pseudolabel import sample_surface
from .scenes import PATCH_STRIDE, ParametricObject, make_object, procedural_features, rasterize
from .tensor_store import (
    AlignmentRecord,
    DatasetManifest,
    ObjectRecord,
    ViewRecord,
    read_tensor,
    save_manifest,
    write_tensor,
)

logger = logging.getLogger(__name__)

# which object kind realizes which function at generation time
FUNCTION_KINDS = {
    "pour-with": "composite_spout",
    "hang-onto": "composite_handle",
    "press-with": "cylinder",
}

GOLDEN_ANGLE = 2.399963229728653
ELEVATIONS = (-0.5, -0.15, 0.2, 0.5, 0.85, 1.15)  # radians, cycled per view


def _sample_params(kind: str, rng: np.random.Generator, jitter: float = 1.0) -> dict:
    def u(lo: float, hi: float) -> float:
        # shrink the draw toward the range midpoint; jitter=0 -> identical shapes
        mid = 0.5 * (lo + hi)
        return mid + jitter * (rng.uniform(lo, hi) - mid)

    if kind == "composite_spout":
        br = u(0.13, 0.2)
        return {
            "body_radius": br,
            "body_height": u(0.3, 0.45),
            "spout_radius": u(0.3, 0.45) * br * 0.8,
            "spout_length": u(0.13, 0.2),
            "spout_angle_deg": u(20.0, 50.0),
            "segments": 28,
        }
    if kind == "composite_handle":
        return {
            "body_radius": u(0.13, 0.2),
            "body_height": u(0.3, 0.45),
            "clearance": u(0.06, 0.1),
            "thickness": u(0.032, 0.05),
            "segments": 28,
        }
    if kind == "cylinder":
        return {"radius": u(0.1, 0.18), "height": u(0.25, 0.45), "segments": 28}
    if kind == "box":
        return {"half_extents": np.array([u(0.08, 0.2) for _ in range(3)])}
    raise ValueError(f"unknown kind {kind!r}")


def _orbit_cameras(
    obj: ParametricObject,
    n_views: int,
    image_size: int,
    rng: np.random.Generator,
    fill: float = 0.62,
) -> list[Camera]:
    center = 0.5 * (obj.vertices.min(axis=0) + obj.vertices.max(axis=0))
    radius = float(np.max(np.linalg.norm(obj.vertices - center, axis=1)))
    dist = 3.2 * radius
    f = fill * (image_size / 2.0) * dist / radius
    cams = []
    for j in range(n_views):
        az = j * GOLDEN_ANGLE + rng.uniform(-0.12, 0.12)
        el = ELEVATIONS[j % len(ELEVATIONS)] + rng.uniform(-0.08, 0.08)
        eye = center + dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(look_at_camera(eye, center, fx=f, fy=f, width=image_size, height=image_size))
    return cams


def alignment_transform(obb_a, obb_b) -> RigidTransform:
    """Rigid map of object-b-frame points into object-a's frame that carries
    b's part box onto a's (centers to centers, axes to axes)."""
    ta = RigidTransform.from_rt(obb_a.rotation, obb_a.center)
    tb = RigidTransform.from_rt(obb_b.rotation, obb_b.center)
    return ta.compose(tb.inverse())


def build_dataset(
    out_dir: str | Path,
    n_objects: int,
    functions: list[str],
    views_per_object: int,
    seed: int,
    image_size: int = 224,
    channels: int = 12,
    text_dim: int = 16,
    cloud_points: int = 60000,
    pair_mode: str = "ring",
    shape_jitter: float = 1.0,
) -> Path:
    """Generate a full synthetic dataset under out_dir; returns the manifest path.

    Deterministic in its arguments: rerunning with the same seed writes
    byte-identical tensors and manifest.
    """
    if n_objects < 1 or views_per_object < 1:
        raise ValueError("need at least one object and one view")
    if image_size % PATCH_STRIDE:
        raise ValueError(f"image_size must be a multiple of {PATCH_STRIDE}")
    unknown = [f for f in functions if f not in FUNCTION_KINDS]
    if unknown or not functions:
        raise ValueError(f"functions must be a non-empty subset of {sorted(FUNCTION_KINDS)}, got {functions}")

    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)

    objects: list[ObjectRecord] = []
    built: list[ParametricObject] = []
    for i in range(n_objects):
        fn = functions[i % len(functions)]
        kind = FUNCTION_KINDS[fn]
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 11, i]))
        obj = make_object(kind, _sample_params(kind, rng, shape_jitter), seed=int(rng.integers(2**31)))
        built.append(obj)
        object_id = f"obj{i:03d}"

        cams = _orbit_cameras(obj, views_per_object, image_size, rng)
        views = []
        for j, cam in enumerate(cams):
            raster = rasterize(obj, cam)
            if not raster.mask.any():
                raise RuntimeError(f"{object_id} view {j}: empty rasterization")
            feat_seed = int(np.random.SeedSequence([seed & 0xFFFFFFFF, 23, i, j]).generate_state(1)[0])
            grid = procedural_features(obj, cam, raster, seed=feat_seed, channels=channels)
            base = f"tensors/{object_id}_v{j:02d}"
            write_tensor(raster.depth.astype(np.float32), out / f"{base}_depth.dftc")
            write_tensor(raster.mask.astype(np.uint8), out / f"{base}_mask.dftc")
            part_rel = {}
            for pfn, pmask in raster.part_masks.items():
                rel = f"{base}_part_{pfn}.dftc"
                write_tensor(pmask.astype(np.uint8), out / rel)
                part_rel[pfn] = rel
            write_tensor(grid.blocks, out / f"{base}_feat.dftc")
            views.append(
                ViewRecord(
                    depth=f"{base}_depth.dftc",
                    object_mask=f"{base}_mask.dftc",
                    part_masks=part_rel,
                    features=f"{base}_feat.dftc",
                    camera=cam.to_dict(),
                )
            )

        cloud = sample_surface(obj, cloud_points, seed=int(np.random.SeedSequence([seed & 0xFFFFFFFF, 31, i]).generate_state(1)[0]))
        cloud_rel = f"tensors/{object_id}_surface.dftc"
        write_tensor(cloud.astype(np.float32), out / cloud_rel)

        objects.append(
            ObjectRecord(
                object_id=object_id,
                category=kind,
                functions=sorted(obj.part_regions),
                views=views,
                surface_points=cloud_rel,
            )
        )

    alignments = []
    for fn in functions:
        members = [i for i, rec in enumerate(objects) if fn in rec.functions]
        if len(members) < 2:
            logger.warning("function %r has fewer than two objects; no alignments", fn)
            continue
        if pair_mode == "all":
            pairs = [(members[i], members[j]) for i in range(len(members)) for j in range(i + 1, len(members))]
        else:  # ring
            pairs = [(members[i], members[(i + 1) % len(members)]) for i in range(len(members))]
            if len(members) == 2:
                pairs = pairs[:1]
        for ia, ib in pairs:
            obb_a = built[ia].part_regions[fn]
            obb_b = built[ib].part_regions[fn]
            t = alignment_transform(obb_a, obb_b)
            alignments.append(
                AlignmentRecord(
                    object_id_a=objects[ia].object_id,
                    object_id_b=objects[ib].object_id,
                    function=fn,
                    transform=[float(v) for v in t.matrix.reshape(-1)],
                    obb_a=obb_a.to_dict(),
                    obb_b=obb_b.to_dict(),
                )
            )

    fn_embeddings = {}
    for fn in sorted(set(functions)):
        ss = np.random.SeedSequence([seed & 0xFFFFFFFF, 47] + list(fn.encode()))
        vec = np.random.default_rng(ss).normal(size=text_dim)
        vec /= np.linalg.norm(vec)
        rel = f"tensors/fn_{fn}.dftc"
        write_tensor(vec.astype(np.float32), out / rel)
        fn_embeddings[fn] = rel

    manifest = DatasetManifest(objects=objects, alignments=alignments, function_embeddings=fn_embeddings, root=out)
    path = out / "manifest.json"
    save_manifest(manifest, path)
    logger.info("wrote %d objects, %d alignments to %s", len(objects), len(alignments), path)
    return path


def load_camera_view(manifest: DatasetManifest, view: ViewRecord) -> CameraView:
    depth = read_tensor(manifest.resolve(view.depth)).astype(np.float64)
    mask = read_tensor(manifest.resolve(view.object_mask)).astype(bool)
    return CameraView(depth=depth, mask=mask, camera=Camera.from_dict(view.camera))


def load_part_masks(manifest: DatasetManifest, view: ViewRecord) -> dict[str, np.ndarray]:
    return {fn: read_tensor(manifest.resolve(rel)).astype(bool) for fn, rel in view.part_masks.items()}


def load_feature_blocks(manifest: DatasetManifest, view: ViewRecord) -> np.ndarray:
    return read_tensor(manifest.resolve(view.features)).astype(np.float64)


def load_function_vector(manifest: DatasetManifest, fn: str) -> np.ndarray:
    return read_tensor(manifest.resolve(manifest.function_embeddings[fn])).astype(np.float64)
