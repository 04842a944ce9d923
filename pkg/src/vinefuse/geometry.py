"""Rigid-body poses, motion-compensated cloud interpolation, pinhole
projection, and local-to-geodetic conversion.

Conventions
-----------
A transform ``T = (R, t)`` maps a point expressed in its source frame into
its target frame via ``p' = R @ p + t``. A ``Pose`` is the robot's
odom <- robot transform at a stamp, so ``pose.apply(p_robot)`` yields odom
coordinates. The relative transform that re-expresses a cloud captured at
t' in the robot frame at t is ``inverse(pose_t) o pose_t'`` (the cloud
interpolation step). Note that transposing a homogeneous pose matrix is
not its inverse; ``inverse`` always applies the full rigid inversion
``[R.T, -R.T @ t]``.

Cameras are ideal pinholes: images are assumed rectified, so no lens
distortion model is applied anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import GeodesicDomainError, StampMismatchError, VinefuseError

ORTHONORMAL_TOL = 1e-9

# WGS84 ellipsoid
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise VinefuseError(f"rotation must be 3x3, got {r.shape}")
    drift = np.abs(r.T @ r - np.eye(3)).max()
    if drift > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise VinefuseError("rotation matrix is not orthonormal with det +1")
    return r


def _renormalize(rotation: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise VinefuseError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix: Sequence[Sequence[float]]) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise VinefuseError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return RigidTransform(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` then ``a``; re-orthonormalized on drift."""
    rot = a.rotation @ b.rotation
    if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHONORMAL_TOL:
        rot = _renormalize(rot)
    return RigidTransform(rot, a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -(t.rotation.T @ t.translation))


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose(RigidTransform):
    stamp: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.stamp < 0:
            raise VinefuseError(f"pose stamp must be >= 0, got {self.stamp}")

    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame_id: str = "robot"
    stamp: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise VinefuseError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)
    modality: str = "visual"

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise VinefuseError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise VinefuseError("principal point must lie inside the image")


@dataclass(frozen=True)
class GeoOrigin:
    latitude: float
    longitude: float
    altitude: float = 0.0
    heading: float = 0.0  # local x-axis bearing from true north, rad

    def __post_init__(self):
        if abs(self.latitude) > 90.0 or abs(self.longitude) > 180.0:
            raise VinefuseError("origin latitude/longitude out of range")


def interpolate_cloud(cloud: PointCloud, pose_t: Pose, pose_t_prime: Pose) -> PointCloud:
    """Re-express a cloud captured in the robot frame at t' in the robot
    frame at t, using the relative transform inverse(pose_t) o pose_t'."""
    if abs(cloud.stamp - pose_t_prime.stamp) > 1e-6:
        raise StampMismatchError(
            f"cloud stamp {cloud.stamp:.9f} != capture pose stamp "
            f"{pose_t_prime.stamp:.9f}"
        )
    rel = compose(inverse(pose_t.transform()), pose_t_prime.transform())
    return PointCloud(rel.apply(cloud.points), cloud.frame_id, pose_t.stamp)


@dataclass(frozen=True)
class Projection:
    """Points that landed on the image plane: parallel index/u/v/range arrays.

    Iterates as (point_index, u, v, range) tuples.
    """

    indices: np.ndarray
    u: np.ndarray
    v: np.ndarray
    ranges: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self) -> Iterator[tuple[int, float, float, float]]:
        for k in range(len(self)):
            yield (
                int(self.indices[k]),
                float(self.u[k]),
                float(self.v[k]),
                float(self.ranges[k]),
            )


def project(cloud: PointCloud, cam: CameraModel) -> Projection:
    """Pinhole-project a cloud; keeps points in front of the camera whose
    pixel lands inside the image. Range is the camera-frame distance."""
    pts = cam.extrinsic.apply(cloud.points)
    if pts.size == 0:
        e = np.empty(0)
        return Projection(np.empty(0, dtype=int), e, e, e)
    z = pts[:, 2]
    front = z > 0
    u = np.full(len(pts), -1.0)
    v = np.full(len(pts), -1.0)
    u[front] = cam.fx * pts[front, 0] / z[front] + cam.cx
    v[front] = cam.fy * pts[front, 1] / z[front] + cam.cy
    ok = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    idx = np.nonzero(ok)[0]
    return Projection(idx, u[ok], v[ok], np.linalg.norm(pts[ok], axis=1))


def _wgs84_radii(lat_rad: float) -> tuple[float, float]:
    s2 = math.sin(lat_rad) ** 2
    w = math.sqrt(1.0 - WGS84_E2 * s2)
    meridional = WGS84_A * (1.0 - WGS84_E2) / w**3
    prime_vertical = WGS84_A / w
    return meridional, prime_vertical


def local_to_wgs84(position: Sequence[float], origin: GeoOrigin) -> tuple[float, float]:
    """Rotate a local position by the origin heading into ENU and convert the
    offsets on the WGS84 tangent plane at the origin. Altitude unused."""
    if abs(origin.latitude) > 89.9:
        raise GeodesicDomainError(
            f"tangent plane degenerate at latitude {origin.latitude}"
        )
    x, y = float(position[0]), float(position[1])
    east = x * math.sin(origin.heading) - y * math.cos(origin.heading)
    north = x * math.cos(origin.heading) + y * math.sin(origin.heading)
    if east == 0.0 and north == 0.0:
        return origin.latitude, origin.longitude
    lat_rad = math.radians(origin.latitude)
    meridional, prime_vertical = _wgs84_radii(lat_rad)
    dlat = north / meridional
    dlon = east / (prime_vertical * math.cos(lat_rad))
    return origin.latitude + math.degrees(dlat), origin.longitude + math.degrees(dlon)


class PoseTrack:
    """Stamp-indexed pose lookup with interpolation.

    A stamp within 1e-3 s of a stored pose returns that pose; otherwise the
    bracketing poses are blended (linear translation, slerp rotation).
    """

    SNAP_TOL = 1e-3

    def __init__(self, poses: Sequence[Pose]):
        if not poses:
            raise VinefuseError("pose track needs at least one pose")
        ordered = sorted(poses, key=lambda p: p.stamp)
        self.poses = list(ordered)
        self.stamps = np.array([p.stamp for p in ordered])

    def pose_at(self, stamp: float) -> Pose:
        k = int(np.searchsorted(self.stamps, stamp))
        candidates = [c for c in (k - 1, k) if 0 <= c < len(self.poses)]
        nearest = min(candidates, key=lambda c: abs(self.stamps[c] - stamp))
        if abs(self.stamps[nearest] - stamp) <= self.SNAP_TOL:
            p = self.poses[nearest]
            return Pose(p.rotation, p.translation, stamp=max(stamp, 0.0))
        if stamp < self.stamps[0] or stamp > self.stamps[-1]:
            raise VinefuseError(
                f"stamp {stamp:.6f} outside pose track "
                f"[{self.stamps[0]:.6f}, {self.stamps[-1]:.6f}]"
            )
        lo, hi = self.poses[k - 1], self.poses[k]
        alpha = (stamp - lo.stamp) / (hi.stamp - lo.stamp)
        trans = (1.0 - alpha) * lo.translation + alpha * hi.translation
        rots = Rotation.from_matrix(np.stack([lo.rotation, hi.rotation]))
        rot = Slerp([0.0, 1.0], rots)(alpha).as_matrix()
        return Pose(rot, trans, stamp=stamp)
