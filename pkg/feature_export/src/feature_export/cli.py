"""Command line front end.

Walks an image directory, pairs each image with the mask of the same stem,
and writes one feature tensor and one aligned mask per view plus a shared
set of function-name embeddings, all in the correspondence toolkit's tensor
container, indexed by a single JSON file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbone import N_BLOCKS, BackboneSpec, PatchBackbone
from .dftc import write_tensor
from .export import ExportError, ExportSpec, export_view
from .text import function_embeddings

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feature-export", description=__doc__)
    p.add_argument("--images", required=True, help="directory of view images")
    p.add_argument("--masks", required=True, help="directory of object masks, matched by stem")
    p.add_argument("--functions", required=True, help="text file, one function name per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--augment", choices=("on", "off"), default="off",
                   help="paint backgrounds a per-image random color")
    p.add_argument("--seed", type=int, default=0, help="seed for augmentation colors")
    p.add_argument("--hidden", type=int, default=768, help="backbone width")
    p.add_argument("--layers", type=int, default=12, help="backbone depth")
    p.add_argument("--heads", type=int, default=12)
    p.add_argument("--ffn", type=int, default=3072, help="backbone MLP width")
    p.add_argument("--init-seed", type=int, default=0, help="seed for backbone weights")
    return p


def _find_views(image_dir: Path, mask_dir: Path) -> list[tuple[str, Path, Path]]:
    if not image_dir.is_dir():
        raise ExportError(f"not a directory: {image_dir}")
    images = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not images:
        raise ExportError(f"no images found under {image_dir}")
    views = []
    for img in images:
        candidates = [mask_dir / (img.stem + s) for s in _IMAGE_SUFFIXES]
        mask = next((c for c in candidates if c.is_file()), None)
        if mask is None:
            raise ExportError(f"no mask for {img.name} under {mask_dir}")
        views.append((img.stem, img, mask))
    return views


def _read_function_names(path: Path) -> list[str]:
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ExportError(f"cannot read function list {path}: {e}") from e
    names = [ln.strip() for ln in lines if ln.strip()]
    if not names:
        raise ExportError(f"no function names in {path}")
    return names


def run_export(args: argparse.Namespace) -> Path:
    backbone_spec = BackboneSpec(
        hidden_size=args.hidden,
        num_layers=args.layers,
        num_heads=args.heads,
        intermediate_size=args.ffn,
        init_seed=args.init_seed,
    )
    spec = ExportSpec(augment=args.augment == "on", seed=args.seed, backbone=backbone_spec)
    views = _find_views(Path(args.images), Path(args.masks))
    names = _read_function_names(Path(args.functions))

    out = Path(args.out)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    (out / "functions").mkdir(exist_ok=True)

    backbone = PatchBackbone(backbone_spec)
    index: dict = {
        "image_size": spec.image_size,
        "stride": spec.stride,
        "blocks": N_BLOCKS,
        "channels": backbone_spec.hidden_size,
        "grid": backbone_spec.grid,
        "augment": spec.augment,
        "seed": spec.seed,
        "views": [],
        "function_embeddings": {},
    }
    for stem, img_path, mask_path in views:
        planes, mask = export_view(img_path, mask_path, spec, backbone)
        feat_rel = f"tensors/{stem}_feat.dftc"
        mask_rel = f"tensors/{stem}_mask.dftc"
        write_tensor(planes, out / feat_rel)
        write_tensor(mask, out / mask_rel)
        index["views"].append({"name": stem, "features": feat_rel, "mask": mask_rel})

    kept, vectors = function_embeddings(names)
    for name, vec in zip(kept, vectors):
        rel = f"functions/fn_{name}.dftc"
        write_tensor(vec, out / rel)
        index["function_embeddings"][name] = rel

    with open(out / "index.json", "w") as f:
        json.dump(index, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        out = run_export(args)
    except (ExportError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"wrote {len(list((out / 'tensors').iterdir()))} tensors to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
