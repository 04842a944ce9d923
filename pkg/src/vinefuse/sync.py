"""Soft synchronization of per-modality image streams with pose and LiDAR
streams into FrameBundles."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .errors import StreamOrderError, VinefuseError
from .geometry import PointCloud, Pose, PoseTrack

MODALITIES = ("visual", "nir", "thermal")
MODALITY_CHANNELS = {"visual": 3, "nir": 3, "thermal": 1}
DEFAULT_TOLERANCE = 0.05  # half the 10 Hz period


@dataclass(frozen=True)
class ModalityFrame:
    modality: str
    image_path: Path
    width: int
    height: int
    channels: int
    stamp: float
    stamp_ns: int
    pose: Pose | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise VinefuseError("frame dimensions must be positive")
        if self.channels not in (1, 3):
            raise VinefuseError(f"channels must be 1 or 3, got {self.channels}")
        if self.stamp < 0:
            raise VinefuseError("frame stamp must be >= 0")


@dataclass(frozen=True)
class FrameBundle:
    bundle_id: str
    reference_stamp: float
    frames: dict[str, ModalityFrame]
    cloud: PointCloud | None
    complete: bool

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(sorted(self.frames))


def bundle_id_for_stamp_ns(stamp_ns: int) -> str:
    return f"b{stamp_ns:013d}"


def stamp_ns_for_bundle_id(bundle_id: str) -> int:
    return int(bundle_id.lstrip("b"))


def _check_monotonic(name: str, stamps: Sequence[float]) -> None:
    for prev, cur in zip(stamps, stamps[1:]):
        if cur < prev:
            raise StreamOrderError(name, cur)


def bundle_streams(
    frames: Mapping[str, Sequence[ModalityFrame]],
    clouds: Sequence[PointCloud],
    poses: Sequence[Pose] | PoseTrack,
    tolerance: float = DEFAULT_TOLERANCE,
    anchor: str = "visual",
) -> list[FrameBundle]:
    """Greedy grouping anchored on the anchor stream.

    For each anchor frame, the nearest-in-time unused frame of every other
    modality is attached when doing so keeps all member stamps within
    ``tolerance`` of each other (hence of the earliest member, the bundle's
    reference stamp). The attached cloud is the first one with stamp >= the
    reference stamp. Poses are attached to every member frame from the track.
    """
    if tolerance <= 0:
        raise VinefuseError("tolerance must be positive")
    if anchor not in frames:
        raise VinefuseError(f"anchor modality '{anchor}' missing from input streams")
    for modality, stream in frames.items():
        _check_monotonic(f"frames/{modality}", [f.stamp for f in stream])
    _check_monotonic("clouds", [c.stamp for c in clouds])
    track = poses if isinstance(poses, PoseTrack) else PoseTrack(list(poses))
    _check_monotonic("poses", list(track.stamps))

    cloud_stamps = [c.stamp for c in clouds]
    others = sorted(m for m in frames if m != anchor)
    stamps_by_mod = {m: [f.stamp for f in frames[m]] for m in others}
    used: dict[str, set[int]] = {m: set() for m in others}

    def nearest_unused(modality: str, t: float) -> int | None:
        stamps = stamps_by_mod[modality]
        k = bisect_left(stamps, t)
        below = k - 1
        while below >= 0 and below in used[modality]:
            below -= 1
        above = k
        while above < len(stamps) and above in used[modality]:
            above += 1
        candidates = [c for c in (below, above) if 0 <= c < len(stamps)]
        if not candidates:
            return None
        return min(candidates, key=lambda c: (abs(stamps[c] - t), c))

    bundles: list[FrameBundle] = []
    for anchor_frame in frames[anchor]:
        t = anchor_frame.stamp
        members = {anchor: anchor_frame}
        for modality in others:
            best = nearest_unused(modality, t)
            if best is None:
                continue
            cand_stamp = stamps_by_mod[modality][best]
            window = [m.stamp for m in members.values()] + [cand_stamp]
            if abs(cand_stamp - t) <= tolerance and max(window) - min(window) <= tolerance:
                members[modality] = frames[modality][best]
                used[modality].add(best)

        reference = min(m.stamp for m in members.values())
        ci = bisect_left(cloud_stamps, reference - 1e-9)
        cloud = clouds[ci] if ci < len(clouds) else None

        stamped = {
            mod: replace(frame, pose=track.pose_at(frame.stamp))
            for mod, frame in members.items()
        }
        bundles.append(
            FrameBundle(
                bundle_id=bundle_id_for_stamp_ns(anchor_frame.stamp_ns),
                reference_stamp=reference,
                frames=stamped,
                cloud=cloud,
                complete=set(stamped) == set(frames),
            )
        )
    return bundles
