"""Parametric desk objects, a scalar z-buffer rasterizer, and procedural
per-view features.

Objects live in their own frame (== world frame at generation time; cameras
orbit the origin). Each object carries labeled part regions as oriented boxes
whose surfaces stand in for functional parts (spout, handle, ...). Features
are samples of a smooth seeded field of the 3D surface point, so two views of
the same object agree wherever they see the same surface; background grid
cells get a per-image random constant, which is what a background-augmented
backbone would produce.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, GeometryError, Obb, backproject, round_half_up

logger = logging.getLogger(__name__)

PATCH_STRIDE = 14  # fixed patch stride in pixels; image dims must be multiples


class SceneError(ValueError):
    pass


@dataclass
class ParametricObject:
    """Triangle mesh + labeled part regions.

    part_regions maps a function name to an Obb in the object frame; the box
    must intersect the mesh surface (validated). surface_field_seed pins the
    object's procedural feature field.
    """

    vertices: np.ndarray
    faces: np.ndarray
    part_regions: dict[str, Obb]
    surface_field_seed: int
    kind: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise SceneError("face index out of range")
        if self.faces.size:
            areas = _face_areas(self.vertices, self.faces)
            if np.any(areas < 1e-12):
                raise SceneError("degenerate triangle in mesh")
        for fn, obb in self.part_regions.items():
            if not _obb_touches_surface(self.vertices, self.faces, obb):
                raise SceneError(f"part region {fn!r} does not intersect the mesh surface")


def _face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _obb_touches_surface(vertices: np.ndarray, faces: np.ndarray, obb: Obb) -> bool:
    # cheap sufficient check: any face sample point (corners, edge midpoints,
    # centroid) inside the box
    if faces.size == 0:
        return False
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    samples = np.concatenate([a, b, c, (a + b) / 2, (b + c) / 2, (a + c) / 2, (a + b + c) / 3])
    return bool(np.any(obb.contains(samples)))


# ---------------------------------------------------------------------------
# mesh builders


def _box_mesh(half: np.ndarray, center: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    hx, hy, hz = half
    verts = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ]
    )
    if center is not None:
        verts = verts + np.asarray(center, dtype=np.float64)
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return verts, faces


def _cylinder_mesh(radius: float, height: float, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Cylinder along +z from z=0 to z=height; 4*segments triangles."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.concatenate([ring, np.zeros((segments, 1))], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height)], axis=1)
    verts = np.concatenate([bottom, top, [[0, 0, 0]], [[0, 0, height]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + i])          # side lower
        faces.append([j, segments + j, segments + i])  # side upper
        faces.append([cb, j, i])                    # bottom cap
        faces.append([ct, segments + i, segments + j])  # top cap
    return verts, np.array(faces)


def _frame_from_dir(direction: np.ndarray) -> np.ndarray:
    """Orthonormal frame whose third column is ``direction``."""
    w = direction / np.linalg.norm(direction)
    ref = np.array([0.0, 0.0, 1.0]) if abs(w[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(ref, w)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    return np.stack([u, v, w], axis=1)


def _merge(meshes: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    verts, faces, offset = [], [], 0
    for v, f in meshes:
        verts.append(v)
        faces.append(f + offset)
        offset += len(v)
    return np.concatenate(verts), np.concatenate(faces)


def _require(cond: bool, msg: str):
    if not cond:
        raise SceneError(msg)


def make_object(kind: str, params: dict, seed: int) -> ParametricObject:
    """Build a parametric desk object. Deterministic in (kind, params, seed).

    Kinds and their params (lengths in scene units, roughly meters):

    * ``box``: half_extents (3 floats, each in (0, 1]); part "press-with" on
      the top face.
    * ``cylinder``: radius (0, 0.5], height (0, 1.2], segments int in
      [3, 128]; part "press-with" on the top cap.
    * ``composite_spout``: body_radius, body_height, spout_radius,
      spout_length, spout_angle_deg in [5, 80], segments; a tilted tube near
      the rim, part "pour-with" around the tube.
    * ``composite_handle``: body_radius, body_height, clearance, thickness,
      segments; a C-bracket on the +x side, part "hang-onto" around it.
    """
    if kind == "box":
        half = np.asarray(params["half_extents"], dtype=np.float64)
        _require(half.shape == (3,) and np.all(half > 0) and np.all(half <= 1.0), "box half_extents must be in (0, 1]^3")
        verts, faces = _box_mesh(half)
        part = Obb(center=[0, 0, half[2]], half_extents=[half[0], half[1], max(0.1 * half[2], 1e-3)], rotation=np.eye(3))
        regions = {"press-with": part}
    elif kind == "cylinder":
        r, h, seg = float(params["radius"]), float(params["height"]), int(params["segments"])
        _require(0 < r <= 0.5, "cylinder radius must be in (0, 0.5]")
        _require(0 < h <= 1.2, "cylinder height must be in (0, 1.2]")
        _require(3 <= seg <= 128, "cylinder segments must be in [3, 128]")
        verts, faces = _cylinder_mesh(r, h, seg)
        part = Obb(center=[0, 0, h], half_extents=[r * 1.05, r * 1.05, max(0.05 * h, 1e-3)], rotation=np.eye(3))
        regions = {"press-with": part}
    elif kind == "composite_spout":
        br, bh = float(params["body_radius"]), float(params["body_height"])
        sr, sl = float(params["spout_radius"]), float(params["spout_length"])
        ang = float(params.get("spout_angle_deg", 35.0))
        seg = int(params.get("segments", 24))
        _require(0 < br <= 0.4 and 0 < bh <= 1.0, "body dims out of range")
        _require(0 < sr < 0.8 * br, "spout radius must be < 0.8 * body radius")
        _require(0 < sl <= 0.6, "spout length must be in (0, 0.6]")
        _require(5 <= ang <= 80, "spout angle must be in [5, 80] degrees")
        _require(6 <= seg <= 64, "segments must be in [6, 64]")
        body = _cylinder_mesh(br, bh, seg)
        a = np.deg2rad(ang)
        direction = np.array([np.cos(a), 0.0, np.sin(a)])
        base = np.array([0.85 * br, 0.0, 0.78 * bh])
        sv, sf = _cylinder_mesh(sr, sl, max(8, seg // 2))
        frame = _frame_from_dir(direction)
        sv = sv @ frame.T + base
        verts, faces = _merge([body, (sv, sf)])
        center = base + direction * (sl / 2)
        part = Obb(
            center=center,
            half_extents=[sr * 1.6, sr * 1.6, sl / 2 + sr],
            rotation=frame,
        )
        regions = {"pour-with": part}
    elif kind == "composite_handle":
        br, bh = float(params["body_radius"]), float(params["body_height"])
        cl, th = float(params["clearance"]), float(params["thickness"])
        seg = int(params.get("segments", 24))
        _require(0 < br <= 0.4 and 0 < bh <= 1.0, "body dims out of range")
        _require(0 < cl <= 0.3, "clearance must be in (0, 0.3]")
        _require(0 < th <= cl, "thickness must be in (0, clearance]")
        _require(6 <= seg <= 64, "segments must be in [6, 64]")
        body = _cylinder_mesh(br, bh, seg)
        z1, z2 = 0.28 * bh, 0.72 * bh
        bar_len = cl + 2 * th
        vbar = _box_mesh(np.array([th / 2, th / 2, (z2 - z1) / 2 + th / 2]), center=[br + cl + th / 2, 0, (z1 + z2) / 2])
        bbar = _box_mesh(np.array([bar_len / 2, th / 2, th / 2]), center=[br + cl / 2, 0, z1])
        tbar = _box_mesh(np.array([bar_len / 2, th / 2, th / 2]), center=[br + cl / 2, 0, z2])
        verts, faces = _merge([body, vbar, bbar, tbar])
        part = Obb(
            center=[br + (cl + th) / 2, 0, (z1 + z2) / 2],
            half_extents=[(cl + th) / 2 + th, th * 1.5, (z2 - z1) / 2 + 1.5 * th],
            rotation=np.eye(3),
        )
        regions = {"hang-onto": part}
    else:
        raise SceneError(f"unknown object kind {kind!r}")

    return ParametricObject(
        vertices=verts,
        faces=faces,
        part_regions=regions,
        surface_field_seed=int(seed),
        kind=kind,
        params=dict(params),
    )


# ---------------------------------------------------------------------------
# rasterizer


@dataclass
class Raster:
    """Depth + object mask + one part mask per function, all (H, W)."""

    depth: np.ndarray
    mask: np.ndarray
    part_masks: dict[str, np.ndarray]


def rasterize(obj: ParametricObject, camera: Camera) -> Raster:
    """Scalar z-buffer rasterization at integer pixel centers.

    Depth is perspective-correct (1/z interpolated in screen space). Faces
    with any vertex at or behind the camera are dropped (no near-plane
    clipping; generated scenes keep the camera well away from the surface).
    Unmasked pixels carry depth 0.
    """
    h, w = camera.height, camera.width
    zbuf = np.full((h, w), np.inf)
    cam_rt = camera.world_to_cam
    verts_cam = obj.vertices @ cam_rt[:3, :3].T + cam_rt[:3, 3]
    z = verts_cam[:, 2]
    cols = camera.cx + camera.fx * verts_cam[:, 0] / np.where(z > 0, z, 1.0)
    rows = camera.cy + camera.fy * verts_cam[:, 1] / np.where(z > 0, z, 1.0)

    for f in obj.faces:
        tz = z[f]
        if np.any(tz <= 1e-6):
            continue
        tr, tc = rows[f], cols[f]
        r0 = max(int(np.ceil(tr.min())), 0)
        r1 = min(int(np.floor(tr.max())), h - 1)
        c0 = max(int(np.ceil(tc.min())), 0)
        c1 = min(int(np.floor(tc.max())), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        den = (tc[1] - tc[0]) * (tr[2] - tr[0]) - (tr[1] - tr[0]) * (tc[2] - tc[0])
        if abs(den) < 1e-12:
            continue
        gc, gr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        l0 = ((tc[1] - gc) * (tr[2] - gr) - (tr[1] - gr) * (tc[2] - gc)) / den
        l1 = ((tc[2] - gc) * (tr[0] - gr) - (tr[2] - gr) * (tc[0] - gc)) / den
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        inv_z = l0 / tz[0] + l1 / tz[1] + l2 / tz[2]
        depth = np.where(inv_z > 0, 1.0 / np.where(inv_z > 0, inv_z, 1.0), np.inf)
        patch = zbuf[r0 : r1 + 1, c0 : c1 + 1]
        upd = inside & (depth < patch)
        patch[upd] = depth[upd]

    mask = np.isfinite(zbuf)
    depth = np.where(mask, zbuf, 0.0)
    part_masks = {}
    if mask.any():
        rr, cc = np.nonzero(mask)
        world = backproject(np.stack([rr, cc], axis=1), depth[rr, cc], camera)
        for fn, obb in obj.part_regions.items():
            pm = np.zeros((h, w), dtype=bool)
            pm[rr, cc] = obb.contains(world)
            part_masks[fn] = pm
    else:
        part_masks = {fn: np.zeros((h, w), dtype=bool) for fn in obj.part_regions}
    return Raster(depth=depth, mask=mask, part_masks=part_masks)


# ---------------------------------------------------------------------------
# procedural features


@dataclass
class FeatureGrid:
    """Three feature planes on the patch grid, as a backbone would emit."""

    blocks: np.ndarray  # (3, gh, gw, C) f32
    stride: int = PATCH_STRIDE

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.float32)
        if self.blocks.ndim != 4 or self.blocks.shape[0] != 3:
            raise SceneError(f"blocks must be (3, gh, gw, C), got {self.blocks.shape}")

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.blocks.shape[1], self.blocks.shape[2]

    @property
    def channels(self) -> int:
        return self.blocks.shape[3]


class SurfaceField:
    """Smooth seeded field R^3 -> R^C per block: sums of low-frequency sines.

    Frequencies stay small so bilinear interpolation of grid samples tracks
    the field to well under 1e-3 at desk-scale grid footprints.
    """

    TERMS = 3

    def __init__(self, seed: int, channels: int, blocks: int = 3, freq_lo: float = 0.5, freq_hi: float = 2.5):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x5F1E1D]))
        shape = (blocks, channels, self.TERMS)
        direction = rng.normal(size=shape + (3,))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        mag = rng.uniform(freq_lo, freq_hi, size=shape)
        self.freq = direction * mag[..., None]
        self.phase = rng.uniform(0, 2 * np.pi, size=shape)
        amp = rng.uniform(0.3, 1.0, size=shape)
        self.amp = amp / amp.sum(axis=-1, keepdims=True)
        self.blocks = blocks
        self.channels = channels

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """(n, 3) points -> (blocks, n, C) features."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        proj = np.einsum("nd,bckd->bnck", pts, self.freq)
        vals = np.sin(proj + self.phase[:, None]) * self.amp[:, None]
        return vals.sum(axis=-1)


def procedural_features(
    obj: ParametricObject,
    camera: Camera,
    raster: Raster,
    seed: int,
    channels: int,
    stride: int = PATCH_STRIDE,
) -> FeatureGrid:
    """Multi-view-consistent features on the patch grid.

    Each grid cell takes the field value of the surface point seen at the
    cell-center pixel; cells whose center pixel misses the object get one
    per-image random constant vector (seeded by ``seed``, which should vary
    per view). The field itself is pinned by obj.surface_field_seed, so any
    two views of the object sample the same function of 3D position.
    """
    if channels < 4:
        raise SceneError(f"need at least 4 feature channels, got {channels}")
    h, w = camera.height, camera.width
    if h % stride or w % stride:
        raise SceneError(f"image dims ({h}, {w}) must be multiples of stride {stride}")
    gh, gw = h // stride, w // stride
    field = SurfaceField(obj.surface_field_seed, channels)
    bg_rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0xB6C0]))
    background = bg_rng.uniform(-1.0, 1.0, size=(3, channels))

    centers_r = stride * (np.arange(gh) + 0.5) - 0.5
    centers_c = stride * (np.arange(gw) + 0.5) - 0.5
    ri = round_half_up(centers_r)
    ci = round_half_up(centers_c)
    grid_r, grid_c = np.meshgrid(ri, ci, indexing="ij")
    cell_mask = raster.mask[grid_r, grid_c]

    blocks = np.broadcast_to(background[:, None, None, :], (3, gh, gw, channels)).copy()
    if cell_mask.any():
        rr = grid_r[cell_mask]
        cc = grid_c[cell_mask]
        pts = backproject(np.stack([rr, cc], axis=1), raster.depth[rr, cc], camera)
        vals = field(pts)  # (3, n, C)
        blocks[:, cell_mask, :] = vals
    return FeatureGrid(blocks=blocks.astype(np.float32), stride=stride)
