"""Shared fixtures: one small synthetic dataset reused across test modules.

Built once per session; tests must not mutate files under it.
"""

from pathlib import Path

import pytest

from funcorr.dataset import build_dataset
from funcorr.tensor_store import DatasetManifest, load_manifest


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data")
    build_dataset(
        out_dir=out,
        n_objects=4,
        functions=["pour-with", "hang-onto"],
        views_per_object=5,
        seed=11,
        image_size=56,
        channels=8,
        text_dim=16,
        cloud_points=1500,
        pair_mode="ring",
    )
    return out


@pytest.fixture(scope="session")
def manifest(dataset_dir) -> DatasetManifest:
    return load_manifest(dataset_dir / "manifest.json")
