import numpy as np
import pytest
from PIL import Image

from conftest import TINY
from feature_export.export import ExportError, ExportSpec, export_view


@pytest.fixture(scope="module")
def paths(scene_dir):
    return scene_dir / "images" / "viewA.png", scene_dir / "masks" / "viewA.png"


def test_planes_shape_and_dtype(paths, backbone):
    planes, mask = export_view(*paths, ExportSpec(backbone=TINY), backbone)
    g = TINY.grid
    assert planes.shape == (3, g, g, TINY.hidden_size)
    assert planes.dtype == np.float32
    assert np.isfinite(planes).all()
    assert mask.shape == (TINY.image_size, TINY.image_size)
    assert mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 1}
    # the elliptical object survives the crop with plenty of area on both sides
    frac = mask.mean()
    assert 0.1 < frac < 0.9


def test_repeat_export_is_bitwise_identical(paths, backbone):
    spec = ExportSpec(backbone=TINY)
    a, ma = export_view(*paths, spec, backbone)
    b, mb = export_view(*paths, spec, backbone)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ma, mb)


def test_augment_is_seeded_per_image(paths, backbone):
    on_7 = ExportSpec(augment=True, seed=7, backbone=TINY)
    a, _ = export_view(*paths, on_7, backbone)
    b, _ = export_view(*paths, on_7, backbone)
    np.testing.assert_array_equal(a, b)
    c, _ = export_view(*paths, ExportSpec(augment=True, seed=8, backbone=TINY), backbone)
    assert not np.array_equal(a, c)
    d, _ = export_view(*paths, ExportSpec(backbone=TINY), backbone)
    assert not np.array_equal(a, d)


def test_augment_keeps_the_mask(paths, backbone):
    _, plain = export_view(*paths, ExportSpec(backbone=TINY), backbone)
    _, aug = export_view(*paths, ExportSpec(augment=True, seed=0, backbone=TINY), backbone)
    np.testing.assert_array_equal(plain, aug)


def test_mask_size_mismatch_is_an_error(paths, tmp_path, backbone):
    img_path, _ = paths
    bad = tmp_path / "bad_mask.png"
    Image.fromarray(np.zeros((10, 10), dtype=np.uint8)).save(bad)
    with pytest.raises(ExportError, match="mask"):
        export_view(img_path, bad, ExportSpec(backbone=TINY), backbone)


def test_unreadable_image_is_an_error(paths, tmp_path, backbone):
    _, mask_path = paths
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image at all")
    with pytest.raises(ExportError, match="cannot read image"):
        export_view(junk, mask_path, ExportSpec(backbone=TINY), backbone)


def test_small_input_is_upscaled(scene_dir, tmp_path, backbone):
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(60, 90, 3), dtype=np.uint8)
    mask = np.zeros((60, 90), dtype=np.uint8)
    mask[20:40, 30:70] = 255
    Image.fromarray(img).save(tmp_path / "small.png")
    Image.fromarray(mask).save(tmp_path / "small_mask.png")
    planes, out_mask = export_view(
        tmp_path / "small.png", tmp_path / "small_mask.png", ExportSpec(backbone=TINY), backbone
    )
    assert planes.shape == (3, TINY.grid, TINY.grid, TINY.hidden_size)
    assert out_mask.any() and not out_mask.all()
