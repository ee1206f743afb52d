"""ViT patch-feature extraction (DINOv2 architecture, patch stride 14).

No pretrained checkpoint ships with this sandbox, so the model initializes
from a seeded RNG: the exporter's contract is the feature *geometry* — grid
shapes, dtypes, and bitwise reproducibility — not transfer quality. Loading a
real checkpoint into ``PatchBackbone.model`` before export upgrades the
features without touching any other code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from transformers import Dinov2Config, Dinov2Model

N_BLOCKS = 3  # planes exported per view: the last three transformer blocks


@dataclass(frozen=True)
class BackboneSpec:
    hidden_size: int = 768
    num_layers: int = 12
    num_heads: int = 12
    intermediate_size: int = 3072
    patch_size: int = 14
    image_size: int = 224
    init_seed: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image size {self.image_size} not a multiple of patch {self.patch_size}")
        if self.num_layers < N_BLOCKS:
            raise ValueError(f"need at least {N_BLOCKS} layers to export {N_BLOCKS} blocks")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


class PatchBackbone:
    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        cfg = Dinov2Config(
            image_size=spec.image_size,
            patch_size=spec.patch_size,
            hidden_size=spec.hidden_size,
            num_hidden_layers=spec.num_layers,
            num_attention_heads=spec.num_heads,
            intermediate_size=spec.intermediate_size,
        )
        torch.manual_seed(spec.init_seed)
        self.model = Dinov2Model(cfg).eval()

    def patch_planes(self, pixels: np.ndarray) -> np.ndarray:
        """Features of the last three blocks for one normalized CHW image.

        Returns (3, grid, grid, hidden) float32; the CLS token is dropped.
        """
        if pixels.shape != (3, self.spec.image_size, self.spec.image_size):
            raise ValueError(f"expected (3, {self.spec.image_size}, {self.spec.image_size}), got {pixels.shape}")
        x = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))[None]
        with torch.no_grad():
            out = self.model(x, output_hidden_states=True)
        g = self.spec.grid
        planes = [
            h[0, 1:].reshape(g, g, self.spec.hidden_size).numpy()
            for h in out.hidden_states[-N_BLOCKS:]
        ]
        return np.stack(planes).astype(np.float32)
