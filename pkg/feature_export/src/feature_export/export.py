"""Per-view export: image + object mask in, patch-feature planes out.

Images are resized (short side) and center-cropped to the working resolution
before extraction, masks ride along under nearest-neighbor so they stay
aligned. With augmentation on, the background is painted a single uniform
random color drawn from a per-image seed, so batch order never changes a
view's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import BackboneSpec, PatchBackbone
from .text import name_seed

# standard ImageNet statistics, the normalization every ViT here expects
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportSpec:
    augment: bool = False
    seed: int = 0
    backbone: BackboneSpec = field(default_factory=BackboneSpec)

    @property
    def image_size(self) -> int:
        return self.backbone.image_size

    @property
    def stride(self) -> int:
        return self.backbone.patch_size


def _load_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as e:
        raise ExportError(f"cannot read image {path}: {e}") from e


def _load_mask(path: Path, image_hw: tuple[int, int]) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mask = np.asarray(im.convert("L")) > 0
    except OSError as e:
        raise ExportError(f"cannot read mask {path}: {e}") from e
    if mask.shape != image_hw:
        raise ExportError(f"mask {path} is {mask.shape}, image is {image_hw}")
    return mask


def _resize_crop(arr: np.ndarray, size: int, resample) -> np.ndarray:
    h, w = arr.shape[:2]
    scale = size / min(h, w)
    nh, nw = max(round(h * scale), size), max(round(w * scale), size)
    im = Image.fromarray(arr).resize((nw, nh), resample=resample)
    left, top = (nw - size) // 2, (nh - size) // 2
    return np.asarray(im.crop((left, top, left + size, top + size)))


def export_view(
    image_path: str | Path,
    mask_path: str | Path,
    spec: ExportSpec,
    backbone: PatchBackbone,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature planes and aligned mask for one view.

    Returns ((3, g, g, C) float32 planes, (size, size) uint8 mask).
    """
    image_path, mask_path = Path(image_path), Path(mask_path)
    img = _load_rgb(image_path)
    mask = _load_mask(mask_path, img.shape[:2])
    size = spec.image_size
    img = _resize_crop(img, size, Image.Resampling.BILINEAR)
    mask = _resize_crop(mask.astype(np.uint8) * 255, size, Image.Resampling.NEAREST) > 0
    if spec.augment:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, name_seed(image_path.name)]))
        img = img.copy()
        img[~mask] = rng.integers(0, 256, size=3, dtype=np.uint8)
    x = (img.astype(np.float32) / 255.0 - _MEAN) / _STD
    planes = backbone.patch_planes(np.moveaxis(x, -1, 0))
    return planes, mask.astype(np.uint8)
