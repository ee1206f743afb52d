"""Pinhole camera geometry: backprojection, projection, multi-view pairing.

Conventions used across the package:

* pixel coordinates are (row, col) and integer coordinates address pixel
  centers, so a WxH image spans [-0.5, H-0.5] x [-0.5, W-0.5];
* the camera frame is +x right (columns), +y down (rows), +z forward;
* ``world_to_cam`` is a 4x4 rigid transform taking world points into that
  camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


def _check_rigid(matrix: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise GeometryError(f"rigid transform must be 4x4, got {m.shape}")
    r = m[:3, :3]
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise GeometryError("rotation block is not orthonormal")
    if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > tol:
        raise GeometryError("last row must be [0, 0, 0, 1]")
    return m


@dataclass(frozen=True)
class RigidTransform:
    """4x4 rigid transform; validated (orthonormal rotation) at construction."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _check_rigid(self.matrix))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(4))

    @staticmethod
    def from_rt(rotation: np.ndarray, translation: np.ndarray) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return RigidTransform(m)

    def inverse(self) -> "RigidTransform":
        r = self.matrix[:3, :3]
        t = self.matrix[:3, 3]
        return RigidTransform.from_rt(r.T, -r.T @ t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(x) == self(other(x))."""
        return RigidTransform(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]
        return out[0] if single else out


@dataclass(frozen=True)
class Obb:
    """Oriented bounding box. ``rotation`` columns are the box axes expressed
    in the parent frame, so local = rotation.T @ (x - center)."""

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.any(h <= 0):
            raise GeometryError(f"half extents must be positive, got {h}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise GeometryError("obb rotation is not orthonormal")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "rotation", r)

    def contains(self, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        local = (pts - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + pad, axis=1)

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
        }

    @staticmethod
    def from_dict(d: dict) -> "Obb":
        return Obb(
            center=np.array(d["center"], dtype=np.float64),
            half_extents=np.array(d["half_extents"], dtype=np.float64),
            rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics + extrinsics for one view."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image dimensions must be positive")
        object.__setattr__(self, "world_to_cam", _check_rigid(self.world_to_cam))

    @property
    def cam_to_world(self) -> np.ndarray:
        return RigidTransform(self.world_to_cam).inverse().matrix

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
            "world_to_cam": [float(v) for v in np.asarray(self.world_to_cam).reshape(-1)],
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            world_to_cam=np.array(d["world_to_cam"], dtype=np.float64).reshape(4, 4),
        )


@dataclass
class CameraView:
    """Depth + object mask + camera for one rendered view.

    depth is metric along the camera z axis, 0 where the mask is empty.
    """

    depth: np.ndarray
    mask: np.ndarray
    camera: Camera

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask).astype(bool)
        if self.depth.shape != self.mask.shape:
            raise GeometryError("depth and mask shapes differ")
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise GeometryError("depth shape does not match camera dimensions")


@dataclass
class CorrespondenceSet:
    """Paired pixels across two views. scores, when set, lie in [-1, 1]."""

    pixels_a: np.ndarray
    pixels_b: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.pixels_a = np.asarray(self.pixels_a, dtype=np.int64).reshape(-1, 2)
        self.pixels_b = np.asarray(self.pixels_b, dtype=np.int64).reshape(-1, 2)
        if self.pixels_a.shape != self.pixels_b.shape:
            raise GeometryError("pixel arrays must pair up 1:1")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if self.scores.shape[0] != self.pixels_a.shape[0]:
                raise GeometryError("scores length mismatch")
            if self.scores.size and (self.scores.min() < -1 - 1e-9 or self.scores.max() > 1 + 1e-9):
                raise GeometryError("scores must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.pixels_a.shape[0]


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Nearest integer with .5 rounding away from the floor, elementwise."""
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def backproject(pixels: np.ndarray, depths: np.ndarray, camera: Camera) -> np.ndarray:
    """Lift (row, col) pixels with depths into world points.

    Args:
        pixels: (2,) or (n, 2) real-valued (row, col).
        depths: scalar or (n,) positive metric depth along camera z.
        camera: the observing camera.

    Returns:
        (3,) or (n, 3) world points.
    """
    pix = np.asarray(pixels, dtype=np.float64)
    single = pix.ndim == 1
    pix = np.atleast_2d(pix)
    d = np.atleast_1d(np.asarray(depths, dtype=np.float64))
    if np.any(d <= 0):
        raise GeometryError("depth must be positive")
    x = (pix[:, 1] - camera.cx) / camera.fx * d
    y = (pix[:, 0] - camera.cy) / camera.fy * d
    cam_pts = np.stack([x, y, d], axis=1)
    world = RigidTransform(camera.world_to_cam).inverse().apply(cam_pts)
    return world[0] if single else world


def project(points: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into the image.

    Returns:
        (pixels, depths): real-valued (row, col) positions and camera-frame
        depths. Raises BehindCameraError if any point has z <= 0.
    """
    pix, z = project_with_validity(points, camera)
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    single = np.asarray(points).ndim == 1
    return (pix[0], z[0]) if single else (pix, z)


def project_with_validity(points: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`project` but never raises; callers filter on depth > 0."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam_pts = RigidTransform(camera.world_to_cam).apply(pts)
    z = cam_pts[:, 2]
    # avoid dividing by zero; invalid entries are filtered by the caller
    safe = np.where(z > 0, z, 1.0)
    col = camera.cx + camera.fx * cam_pts[:, 0] / safe
    row = camera.cy + camera.fy * cam_pts[:, 1] / safe
    return np.stack([row, col], axis=1), z


def multiview_pairs(view_a: CameraView, view_b: CameraView, tol_rel: float = 0.01) -> CorrespondenceSet:
    """Geometric correspondences from view_a into view_b.

    Every masked pixel of A is lifted through A's depth, projected into B and
    rounded to the nearest pixel; the pair is kept iff that pixel is inside
    B's mask and the projected depth agrees with B's stored depth to tol_rel
    (relative), which rejects occluded surface points.

    Returns pairs in A's row-major scan order.
    """
    rows, cols = np.nonzero(view_a.mask)
    if rows.size == 0:
        return CorrespondenceSet(np.zeros((0, 2)), np.zeros((0, 2)))
    depths = view_a.depth[rows, cols]
    valid = depths > 0
    rows, cols, depths = rows[valid], cols[valid], depths[valid]
    pixels_a = np.stack([rows, cols], axis=1)
    world = backproject(pixels_a, depths, view_a.camera)
    proj, z = project_with_validity(world, view_b.camera)
    keep = z > 0
    pix_b = round_half_up(proj)
    keep &= (
        (pix_b[:, 0] >= 0)
        & (pix_b[:, 0] < view_b.camera.height)
        & (pix_b[:, 1] >= 0)
        & (pix_b[:, 1] < view_b.camera.width)
    )
    pb = np.where(keep[:, None], pix_b, 0)
    stored = view_b.depth[pb[:, 0], pb[:, 1]]
    keep &= view_b.mask[pb[:, 0], pb[:, 1]]
    keep &= stored > 0
    keep &= np.abs(z - stored) <= tol_rel * stored
    return CorrespondenceSet(pixels_a[keep], pix_b[keep])


def look_at_camera(
    eye: np.ndarray,
    target: np.ndarray,
    fx: float,
    fy: float,
    width: int,
    height: int,
    up: np.ndarray | None = None,
) -> Camera:
    """Camera at ``eye`` looking at ``target`` with +y of the image pointing
    as far down the world ``up`` axis as the geometry allows."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise GeometryError("eye and target coincide")
    forward /= norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight along up; pick an arbitrary perpendicular
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    return Camera(fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height, world_to_cam=w2c)
