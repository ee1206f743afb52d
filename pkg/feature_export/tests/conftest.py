import numpy as np
import pytest
from PIL import Image

from feature_export.backbone import BackboneSpec, PatchBackbone

# Desk-scale backbone: real layer count for the three exported blocks, tiny
# width so a forward pass is milliseconds.
TINY = BackboneSpec(hidden_size=64, num_layers=4, num_heads=4, intermediate_size=128)


@pytest.fixture(scope="session")
def backbone():
    return PatchBackbone(TINY)


def _scene(size, seed):
    rng = np.random.default_rng(seed)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack(
        [
            (255 * xx / w),
            (255 * yy / h),
            rng.integers(0, 256, size=(h, w)),
        ],
        axis=-1,
    ).astype(np.uint8)
    cy, cx = h / 2, w / 2
    mask = ((yy - cy) ** 2 / (0.3 * h) ** 2 + (xx - cx) ** 2 / (0.22 * w) ** 2) <= 1.0
    return img, mask


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Two views (one non-square) with elliptical object masks."""
    root = tmp_path_factory.mktemp("scenes")
    (root / "images").mkdir()
    (root / "masks").mkdir()
    for name, size, seed in (("viewA", (260, 300), 0), ("viewB", (224, 224), 1)):
        img, mask = _scene(size, seed)
        Image.fromarray(img).save(root / "images" / f"{name}.png")
        Image.fromarray(mask.astype(np.uint8) * 255).save(root / "masks" / f"{name}.png")
    (root / "functions.txt").write_text("pour-with\nhang-onto\n")
    return root
