"""Release gate for the exporter's shape contract, printed as a PASS/FAIL line."""

import numpy as np
import pytest
from funcorr.tensor_store import read_tensor

from feature_export.dftc import write_tensor
from feature_export.export import ExportSpec, export_view
from feature_export.text import function_embeddings


@pytest.fixture
def report(capsys):
    def _report(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}: {name} ({detail})", flush=True)
        assert ok, f"{name}: {detail}"

    return _report


def test_exporter_shape_contract(report, scene_dir, backbone, tmp_path):
    spec = ExportSpec(backbone=backbone.spec)
    planes, mask = export_view(
        scene_dir / "images" / "viewB.png", scene_dir / "masks" / "viewB.png", spec, backbone
    )
    c = backbone.spec.hidden_size
    shape_ok = planes.shape == (3, 16, 16, c) and mask.shape == (224, 224)

    rng = np.random.default_rng(0)
    tensors = [
        planes,
        mask,
        rng.standard_normal((5, 7)),
        rng.integers(-(2**40), 2**40, size=11),
    ]
    round_trip_ok = True
    for i, arr in enumerate(tensors):
        write_tensor(arr, tmp_path / f"{i}.dftc")
        back = read_tensor(tmp_path / f"{i}.dftc")
        round_trip_ok &= back.dtype == arr.dtype and np.array_equal(back, arr)

    names = ["pour-with", "hang-onto", "scoop", "pour-with", "hang-onto"]
    kept, vecs = function_embeddings(names)
    dedup_ok = len(kept) == len(vecs) == len(set(names)) == 3

    report(
        "exporter shape contract",
        shape_ok and round_trip_ok and dedup_ok,
        f"224 -> {planes.shape[1]}x{planes.shape[2]}x{c} for {planes.shape[0]} blocks, "
        f"{len(tensors)} tensors round-trip bit-exact through the toolkit reader: {round_trip_ok}, "
        f"{len(names)} names -> {len(kept)} embeddings after dedup",
    )
