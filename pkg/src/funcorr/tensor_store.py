"""Binary tensor container (DFTC) and dataset manifest I/O.

The container is deliberately dumb: a fixed little-endian header, the shape,
then raw array bytes. It exists so feature exporters, scene generators and the
training code only ever exchange files, never in-process objects.

Layout::

    offset 0   magic  b"DFTC"
    offset 4   version u32 (= 1)
    offset 8   dtype code u8 (0=f32, 1=f64, 2=u8, 3=i64)
    offset 9   ndim u8
    offset 10  2 zero pad bytes
    offset 12  shape, one u64 per dim
    then       raw C-order little-endian data
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"DFTC"
VERSION = 1

# wire code <-> numpy dtype; every array entering the store is converted to
# little endian C order first
_CODE_TO_DTYPE = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<u1"),
    3: np.dtype("<i8"),
}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("i", 8): 3}


class TensorStoreError(Exception):
    """Base class for container format violations."""


class BadMagicError(TensorStoreError):
    pass


class UnsupportedVersionError(TensorStoreError):
    pass


class UnsupportedDtypeError(TensorStoreError):
    pass


class BadShapeError(TensorStoreError):
    pass


class TruncatedFileError(TensorStoreError):
    pass


class ManifestError(Exception):
    """Raised for malformed or dangling dataset manifests."""


def dtype_code(dtype: np.dtype) -> int:
    """Wire code for a numpy dtype, or UnsupportedDtypeError."""
    key = (dtype.kind, dtype.itemsize)
    if key not in _KIND_TO_CODE:
        raise UnsupportedDtypeError(f"dtype {dtype} not in {{f32, f64, u8, i64}}")
    return _KIND_TO_CODE[key]


def write_tensor(array: np.ndarray, path: str | Path) -> None:
    """Serialize ``array`` to ``path``.

    Args:
        array: numpy array with dtype among f32/f64/u8/i64 and every dim > 0.
        path: destination file path.
    """
    array = np.asarray(array)
    code = dtype_code(array.dtype)
    if array.ndim == 0 or any(s <= 0 for s in array.shape):
        raise BadShapeError(f"every dimension must be positive, got {array.shape}")
    if array.ndim > 255:
        raise BadShapeError("ndim exceeds u8")
    data = np.ascontiguousarray(array, dtype=_CODE_TO_DTYPE[code])
    header = MAGIC + struct.pack("<IBBxx", VERSION, code, array.ndim)
    shape = struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(shape)
        f.write(data.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Deserialize a tensor written by :func:`write_tensor`.

    Raises a distinct error per failure mode: BadMagicError,
    UnsupportedVersionError, UnsupportedDtypeError, BadShapeError,
    TruncatedFileError (short *or* trailing bytes).
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes is shorter than the fixed header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    version, code, ndim = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}, expected {VERSION}")
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDtypeError(f"{path}: unknown dtype code {code}")
    if ndim == 0:
        raise BadShapeError(f"{path}: ndim must be >= 1")
    if len(blob) < 12 + 8 * ndim:
        raise TruncatedFileError(f"{path}: header promises {ndim} dims but shape is cut off")
    shape = struct.unpack_from(f"<{ndim}Q", blob, 12)
    if any(s == 0 for s in shape):
        raise BadShapeError(f"{path}: zero-sized dimension in {shape}")
    dtype = _CODE_TO_DTYPE[code]
    start = 12 + 8 * ndim
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = blob[start:]
    if len(payload) < expected:
        raise TruncatedFileError(f"{path}: need {expected} data bytes, found {len(payload)}")
    if len(payload) > expected:
        raise TruncatedFileError(f"{path}: {len(payload) - expected} trailing bytes after data")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class ViewRecord:
    """One rendered view of one object; all paths are manifest-relative."""

    depth: str
    object_mask: str
    part_masks: dict[str, str]
    features: str
    camera: dict
    image: str | None = None


@dataclass
class ObjectRecord:
    object_id: str
    category: str
    functions: list[str]
    views: list[ViewRecord]
    surface_points: str | None = None


@dataclass
class AlignmentRecord:
    """Functional 3D alignment between two objects sharing ``function``.

    ``transform`` (16 row-major floats) maps points of object_b's frame into
    object_a's frame so the two functional parts coincide; the OBBs bound each
    part in its own object frame.
    """

    object_id_a: str
    object_id_b: str
    function: str
    transform: list[float]
    obb_a: dict
    obb_b: dict


@dataclass
class DatasetManifest:
    objects: list[ObjectRecord]
    alignments: list[AlignmentRecord] = field(default_factory=list)
    function_embeddings: dict[str, str] = field(default_factory=dict)
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def object_by_id(self, object_id: str) -> ObjectRecord:
        for rec in self.objects:
            if rec.object_id == object_id:
                return rec
        raise ManifestError(f"unknown object_id {object_id!r}")


def _camera_dict_ok(cam: dict) -> bool:
    keys = {"fx", "fy", "cx", "cy", "width", "height", "world_to_cam"}
    return keys <= set(cam) and len(cam["world_to_cam"]) == 16


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "objects": [
            {
                "object_id": o.object_id,
                "category": o.category,
                "functions": o.functions,
                "surface_points": o.surface_points,
                "views": [
                    {
                        "image": v.image,
                        "depth": v.depth,
                        "object_mask": v.object_mask,
                        "part_masks": v.part_masks,
                        "features": v.features,
                        "camera": v.camera,
                    }
                    for v in o.views
                ],
            }
            for o in manifest.objects
        ],
        "alignments": [
            {
                "object_id_a": a.object_id_a,
                "object_id_b": a.object_id_b,
                "function": a.function,
                "transform": a.transform,
                "obb_a": a.obb_a,
                "obb_b": a.obb_b,
            }
            for a in manifest.alignments
        ],
        "function_embeddings": manifest.function_embeddings,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str | Path, check_paths: bool = True) -> DatasetManifest:
    """Parse and validate a dataset manifest.

    Validation covers the camera dict shape, that alignment endpoints exist and
    share the named function, and (when ``check_paths``) that every referenced
    file exists, reporting the offending object_id.
    """
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {path}: {e}") from e

    objects = []
    for o in doc.get("objects", []):
        views = []
        for v in o.get("views", []):
            if not _camera_dict_ok(v.get("camera", {})):
                raise ManifestError(f"object {o.get('object_id')!r}: malformed camera record")
            views.append(
                ViewRecord(
                    depth=v["depth"],
                    object_mask=v["object_mask"],
                    part_masks=dict(v.get("part_masks", {})),
                    features=v["features"],
                    camera=v["camera"],
                    image=v.get("image"),
                )
            )
        objects.append(
            ObjectRecord(
                object_id=o["object_id"],
                category=o.get("category", ""),
                functions=list(o.get("functions", [])),
                views=views,
                surface_points=o.get("surface_points"),
            )
        )

    alignments = [
        AlignmentRecord(
            object_id_a=a["object_id_a"],
            object_id_b=a["object_id_b"],
            function=a["function"],
            transform=list(a["transform"]),
            obb_a=a["obb_a"],
            obb_b=a["obb_b"],
        )
        for a in doc.get("alignments", [])
    ]

    manifest = DatasetManifest(
        objects=objects,
        alignments=alignments,
        function_embeddings=dict(doc.get("function_embeddings", {})),
        root=path.parent,
    )

    ids = {o.object_id for o in manifest.objects}
    if len(ids) != len(manifest.objects):
        raise ManifestError("duplicate object_id in manifest")
    for a in manifest.alignments:
        for oid in (a.object_id_a, a.object_id_b):
            if oid not in ids:
                raise ManifestError(f"alignment references unknown object_id {oid!r}")
        if len(a.transform) != 16:
            raise ManifestError(f"alignment {a.object_id_a}->{a.object_id_b}: transform needs 16 floats")
        for oid in (a.object_id_a, a.object_id_b):
            if a.function not in manifest.object_by_id(oid).functions:
                raise ManifestError(
                    f"alignment {a.object_id_a}->{a.object_id_b}: object {oid!r} "
                    f"does not carry function {a.function!r}"
                )

    if check_paths:
        for o in manifest.objects:
            rels = [o.surface_points] if o.surface_points else []
            for v in o.views:
                rels += [v.depth, v.object_mask, v.features, v.image]
                rels += list(v.part_masks.values())
            for rel in rels:
                if rel is not None and not manifest.resolve(rel).exists():
                    raise ManifestError(f"object {o.object_id!r}: dangling path {rel!r}")
        for fn, rel in manifest.function_embeddings.items():
            if not manifest.resolve(rel).exists():
                raise ManifestError(f"function {fn!r}: dangling path {rel!r}")
    return manifest
