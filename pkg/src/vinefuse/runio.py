"""Recorded-run directory layout: readers and writers.

Layout::

    <run>/frames/<modality>/<stamp_ns>.png
    <run>/clouds/<stamp_ns>.pcd-ascii      # first line N, then N lines "x y z"
    <run>/poses.csv                        # stamp_ns,tx,ty,tz,qx,qy,qz,qw
    <run>/calib.json                       # per-camera intrinsics + 4x4 extrinsic
    <run>/origin.json                      # lat, lon, alt, heading
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import VinefuseError
from .geometry import CameraModel, GeoOrigin, PointCloud, Pose, PoseTrack, RigidTransform
from .sync import MODALITY_CHANNELS, ModalityFrame

POSES_HEADER = ["stamp_ns", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]


@dataclass
class RunData:
    path: Path
    frames: dict[str, list[ModalityFrame]]
    clouds: list[PointCloud]
    cloud_stamps_ns: list[int]
    poses: PoseTrack
    cameras: dict[str, CameraModel]
    origin: GeoOrigin


def write_cloud(path: Path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [str(len(pts))]
    lines.extend(f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts)
    path.write_text("\n".join(lines) + "\n")


def read_cloud(path: Path, stamp: float) -> PointCloud:
    raw = path.read_text().splitlines()
    if not raw:
        raise VinefuseError(f"empty cloud file {path}")
    n = int(raw[0])
    pts = np.array(
        [[float(v) for v in line.split()] for line in raw[1 : n + 1]], dtype=float
    ).reshape(n, 3)
    return PointCloud(pts, frame_id="robot", stamp=stamp)


def write_poses_csv(path: Path, rows: list[tuple[int, Pose]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSES_HEADER)
        for stamp_ns, pose in rows:
            quat = Rotation.from_matrix(pose.rotation).as_quat()  # x, y, z, w
            writer.writerow(
                [stamp_ns]
                + [f"{v:.9f}" for v in pose.translation]
                + [f"{v:.9f}" for v in quat]
            )


def read_poses_csv(path: Path) -> list[Pose]:
    poses = []
    with path.open() as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "stamp_ns":
                continue
            stamp_ns = int(row[0])
            tx, ty, tz, qx, qy, qz, qw = (float(v) for v in row[1:8])
            rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
            poses.append(Pose(rot, [tx, ty, tz], stamp=stamp_ns / 1e9))
    return poses


def write_calib(path: Path, cameras: dict[str, CameraModel]) -> None:
    payload = {}
    for modality in sorted(cameras):
        cam = cameras[modality]
        payload[modality] = {
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "width": cam.width,
            "height": cam.height,
            "extrinsic": [round(v, 12) for v in cam.extrinsic.as_matrix().reshape(16)],
        }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_calib(path: Path) -> dict[str, CameraModel]:
    payload = json.loads(path.read_text())
    cameras = {}
    for modality, raw in payload.items():
        extrinsic = RigidTransform.from_matrix(np.asarray(raw["extrinsic"], dtype=float))
        cameras[modality] = CameraModel(
            fx=float(raw["fx"]),
            fy=float(raw["fy"]),
            cx=float(raw["cx"]),
            cy=float(raw["cy"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            extrinsic=extrinsic,
            modality=modality,
        )
    return cameras


def write_origin(path: Path, origin: GeoOrigin) -> None:
    path.write_text(
        json.dumps(
            {
                "lat": origin.latitude,
                "lon": origin.longitude,
                "alt": origin.altitude,
                "heading": origin.heading,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )


def read_origin(path: Path) -> GeoOrigin:
    raw = json.loads(path.read_text())
    return GeoOrigin(
        latitude=float(raw["lat"]),
        longitude=float(raw["lon"]),
        altitude=float(raw.get("alt", 0.0)),
        heading=float(raw.get("heading", 0.0)),
    )


def load_run(run_dir: Path | str) -> RunData:
    # absolute so frame paths stay valid for tools launched in other cwds
    run_dir = Path(run_dir).resolve()
    calib_path = run_dir / "calib.json"
    if not calib_path.exists():
        raise VinefuseError(f"missing calibration file {calib_path}")
    cameras = read_calib(calib_path)
    origin = read_origin(run_dir / "origin.json")

    frames: dict[str, list[ModalityFrame]] = {}
    frames_root = run_dir / "frames"
    if frames_root.exists():
        for mod_dir in sorted(frames_root.iterdir()):
            modality = mod_dir.name
            cam = cameras.get(modality)
            if cam is None:
                raise VinefuseError(f"no calibration for modality '{modality}'")
            entries = []
            for img in sorted(mod_dir.glob("*.png"), key=lambda p: int(p.stem)):
                stamp_ns = int(img.stem)
                entries.append(
                    ModalityFrame(
                        modality=modality,
                        image_path=img,
                        width=cam.width,
                        height=cam.height,
                        channels=MODALITY_CHANNELS.get(modality, 3),
                        stamp=stamp_ns / 1e9,
                        stamp_ns=stamp_ns,
                    )
                )
            frames[modality] = entries

    clouds = []
    cloud_stamps_ns = []
    clouds_root = run_dir / "clouds"
    if clouds_root.exists():
        for cf in sorted(clouds_root.glob("*.pcd-ascii"), key=lambda p: int(p.stem)):
            stamp_ns = int(cf.stem)
            clouds.append(read_cloud(cf, stamp_ns / 1e9))
            cloud_stamps_ns.append(stamp_ns)

    poses = read_poses_csv(run_dir / "poses.csv")
    return RunData(
        path=run_dir,
        frames=frames,
        clouds=clouds,
        cloud_stamps_ns=cloud_stamps_ns,
        poses=PoseTrack(poses),
        cameras=cameras,
        origin=origin,
    )
