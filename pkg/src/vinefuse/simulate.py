"""Deterministic synthetic vineyard generator.

Produces a recorded-run directory (the sync module's input layout) plus an
oracle directory holding per-frame trunk masks and detections in the
adapter's result schema, so the mock tool can stand in for the external
annotator/detector. Everything is a pure function of (scene, run config,
seed).

Geometry: trunks are vertical cylinders on a grid; the robot drives a
straight line at a fixed lateral standoff with side-mounted cameras. LiDAR
returns sample the visible half-cylinder surface on an angular x vertical
grid, so every return lies exactly trunk_radius from the trunk axis.
Oracle masks are the rectangles bounding the cylinder silhouette; one is
emitted only when it lies fully inside the image, its camera depth is
within [2 m, 12 m], and its frame occupancy falls strictly inside
(5%, 40%), which keeps every oracle mask inside the annotation pipeline's
occupancy gate.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import runio
from .errors import SimulationError
from .geometry import CameraModel, GeoOrigin, Pose, RigidTransform, rotation_z
from .sync import MODALITIES, bundle_id_for_stamp_ns

DEPTH_BAND = (2.0, 12.0)  # m, camera-frame depth for oracle mask emission
OCCUPANCY_BAND = (0.05, 0.40)  # open interval
SURFACE_THETA_SAMPLES = 9
SURFACE_Z_SAMPLES = 12
DEFAULT_ORIGIN = GeoOrigin(44.05, -123.07, 120.0, 0.0)


@dataclass(frozen=True)
class SceneConfig:
    rows: int = 1
    trees_per_row: int = 10
    tree_spacing: float = 2.0
    row_spacing: float = 5.0
    trunk_radius: float = 0.06
    trunk_height: float = 0.55
    clutter_density: float = 0.0  # points / m^2 of scene footprint, per cloud
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.trees_per_row < 1:
            raise SimulationError("need at least one row and one tree per row")
        if min(self.tree_spacing, self.row_spacing) <= 2 * self.trunk_radius:
            raise SimulationError("spacings must exceed the trunk diameter")
        if self.trunk_radius <= 0 or self.trunk_height <= 0:
            raise SimulationError("trunk dimensions must be positive")
        if self.clutter_density < 0:
            raise SimulationError("clutter density must be >= 0")


@dataclass(frozen=True)
class NoiseConfig:
    pose_sigma_m: float = 0.0
    pose_sigma_rad: float = 0.0
    mask_fp_rate: float = 0.0  # spurious distractor masks, per frame
    mask_fn_rate: float = 0.0  # dropped trunk masks, per trunk per frame
    centroid_jitter_sigma: float = 0.0  # m, horizontal, per trunk per tick
    detector_conf_range: tuple[float, float] = (0.8, 0.99)

    def __post_init__(self):
        for name in ("pose_sigma_m", "pose_sigma_rad", "centroid_jitter_sigma"):
            if getattr(self, name) < 0:
                raise SimulationError(f"{name} must be >= 0")
        for name in ("mask_fp_rate", "mask_fn_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SimulationError(f"{name} must be in [0,1]")
        lo, hi = self.detector_conf_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise SimulationError("detector_conf_range must satisfy 0 <= lo <= hi <= 1")


@dataclass(frozen=True)
class RunConfig:
    speed: float = 0.5  # m/s
    rate: float = 10.0  # Hz
    trajectory_offset: float = -2.2  # lateral path offset from row 0
    lead_in: float = 1.5  # m of approach before/after the row
    cloud_offset: float = 0.02  # s between a frame tick and its cloud
    lidar_range: float = 15.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.speed <= 0 or self.rate <= 0:
            raise SimulationError("speed and rate must be positive")
        if not 0 <= self.cloud_offset < 1.0 / self.rate:
            raise SimulationError("cloud_offset must sit within one tick period")


@dataclass(frozen=True)
class Trunk:
    tree_id: str
    x: float
    y: float


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    trunks: tuple[Trunk, ...]

    def ground_truth(self) -> list[dict]:
        z = self.config.trunk_height / 2.0
        return [
            {"tree_id": t.tree_id, "x": t.x, "y": t.y, "z": z} for t in self.trunks
        ]


def generate_scene(config: SceneConfig, out_path: Path | None = None) -> Scene:
    """Place trunks on a regular grid and optionally write ground_truth.json."""
    trunks = []
    for r in range(config.rows):
        for k in range(config.trees_per_row):
            trunks.append(
                Trunk(
                    tree_id=f"g{r:02d}_{k:02d}",
                    x=k * config.tree_spacing,
                    y=r * config.row_spacing,
                )
            )
    scene = Scene(config=config, trunks=tuple(trunks))
    if out_path is not None:
        write_ground_truth(scene, out_path)
    return scene


def write_ground_truth(scene: Scene, path: Path) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(scene.ground_truth(), indent=2) + "\n")
    return Path(path)


def default_sensor_suite(cam_height: float = 0.275) -> dict[str, CameraModel]:
    """Side-looking rig: optical axis along robot +y, image x along robot +x,
    mounted ``cam_height`` above the ground plane."""
    rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    extrinsic = RigidTransform(rot, rot @ np.array([0.0, 0.0, -cam_height]))
    spec = {
        "visual": (153.0, 64, 48),
        "nir": (158.0, 64, 48),
        "thermal": (198.0, 80, 64),
    }
    return {
        modality: CameraModel(
            fx=f,
            fy=f,
            cx=w / 2.0,
            cy=h / 2.0,
            width=w,
            height=h,
            extrinsic=extrinsic,
            modality=modality,
        )
        for modality, (f, w, h) in spec.items()
    }


def _blank_png(cam: CameraModel) -> bytes:
    mode = "L" if cam.modality == "thermal" else "RGB"
    img = Image.new(mode, (cam.width, cam.height), 128)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _silhouette_rect(
    cam: CameraModel,
    axis_robot: np.ndarray,
    trunk_radius: float,
    trunk_height: float,
) -> tuple[list[list[float]], float, float] | None:
    """Bounding rectangle of a vertical cylinder's silhouette, or None when
    it leaves the image, the depth band, or the occupancy band.

    Returns (polygon, camera depth, frame occupancy).
    """
    base = cam.extrinsic.apply(axis_robot)
    top = cam.extrinsic.apply(axis_robot + np.array([0.0, 0.0, trunk_height]))
    x_c, z_c = float(base[0]), float(base[2])
    if not DEPTH_BAND[0] <= z_c <= DEPTH_BAND[1]:
        return None
    rho = math.hypot(x_c, z_c)
    if rho <= trunk_radius:
        return None
    alpha = math.asin(trunk_radius / rho)
    theta = math.atan2(x_c, z_c)
    u0 = cam.fx * math.tan(theta - alpha) + cam.cx
    u1 = cam.fx * math.tan(theta + alpha) + cam.cx
    z_near = z_c - trunk_radius
    y_lo = min(float(base[1]), float(top[1]))
    y_hi = max(float(base[1]), float(top[1]))
    v0 = cam.fy * y_lo / z_near + cam.cy
    v1 = cam.fy * y_hi / z_near + cam.cy
    if not (0.0 <= u0 and u1 <= cam.width and 0.0 <= v0 and v1 <= cam.height):
        return None
    occupancy = (u1 - u0) * (v1 - v0) / (cam.width * cam.height)
    if not OCCUPANCY_BAND[0] < occupancy < OCCUPANCY_BAND[1]:
        return None
    polygon = [
        [round(u0, 3), round(v0, 3)],
        [round(u1, 3), round(v0, 3)],
        [round(u1, 3), round(v1, 3)],
        [round(u0, 3), round(v1, 3)],
    ]
    return polygon, z_c, occupancy


def _trunk_surface(
    trunk_xy: np.ndarray, toward: np.ndarray, radius: float, height: float
) -> np.ndarray:
    """Visible-half cylinder surface samples (world frame), on a regular
    angular x vertical grid spanning +-80 degrees around the facing azimuth."""
    phi = math.atan2(toward[1], toward[0])
    thetas = phi + np.linspace(-80, 80, SURFACE_THETA_SAMPLES) * math.pi / 180.0
    zs = np.linspace(0.0, height, SURFACE_Z_SAMPLES)
    tt, zz = np.meshgrid(thetas, zs)
    return np.column_stack(
        [
            trunk_xy[0] + radius * np.cos(tt).ravel(),
            trunk_xy[1] + radius * np.sin(tt).ravel(),
            zz.ravel(),
        ]
    )


def _distractor_mask(rng: np.random.Generator, cam: CameraModel) -> dict:
    """Spurious mask: lying (fails the shape filter) half the time, standing
    (must be culled downstream) the other half."""
    standing = rng.random() < 0.5
    if standing:
        h = rng.uniform(0.30, 0.55) * cam.height
        w = h / rng.uniform(1.5, 3.0)
    else:
        w = rng.uniform(0.30, 0.55) * cam.width
        h = w / rng.uniform(1.5, 3.0)
    cx = rng.uniform(w / 2, cam.width - w / 2)
    cy = rng.uniform(h / 2, cam.height - h / 2)
    u0, u1 = cx - w / 2, cx + w / 2
    v0, v1 = cy - h / 2, cy + h / 2
    polygon = [
        [round(u0, 3), round(v0, 3)],
        [round(u1, 3), round(v0, 3)],
        [round(u1, 3), round(v1, 3)],
        [round(u0, 3), round(v1, 3)],
    ]
    return {"polygon": polygon, "score": round(float(rng.uniform(0.6, 1.0)), 4), "tree_id": None}


def simulate_run(
    scene: Scene,
    run_config: RunConfig = RunConfig(),
    sensors: dict[str, CameraModel] | None = None,
    out_dir: Path | str = "run",
) -> Path:
    """Drive the robot along the row and emit the full run directory plus
    oracle masks/detections. Deterministic for a fixed scene seed."""
    sensors = sensors if sensors is not None else default_sensor_suite(
        cam_height=scene.config.trunk_height / 2.0
    )
    unknown = set(sensors) - set(MODALITIES)
    if unknown:
        raise SimulationError(f"unknown sensor modalities {sorted(unknown)}")
    if not sensors:
        raise SimulationError("need at least one sensor")

    out_dir = Path(out_dir)
    clouds_dir = out_dir / "clouds"
    clouds_dir.mkdir(parents=True, exist_ok=True)
    for modality in sensors:
        (out_dir / "frames" / modality).mkdir(parents=True, exist_ok=True)
    oracle_masks_dir = out_dir / "oracle" / "masks"
    oracle_masks_dir.mkdir(parents=True, exist_ok=True)

    cfg = scene.config
    noise = run_config.noise
    rng = np.random.default_rng(cfg.seed)
    png_cache = {m: _blank_png(cam) for m, cam in sorted(sensors.items())}

    row_length = (cfg.trees_per_row - 1) * cfg.tree_spacing
    x_start = -run_config.lead_in
    x_end = row_length + run_config.lead_in
    duration = (x_end - x_start) / run_config.speed
    period_ns = int(round(1e9 / run_config.rate))
    cloud_offset_ns = int(round(run_config.cloud_offset * 1e9))
    n_ticks = int(math.floor(duration * run_config.rate)) + 1

    clutter_area = (x_end - x_start) * (
        (cfg.rows - 1) * cfg.row_spacing + abs(run_config.trajectory_offset) + 1.0
    )
    n_clutter = int(round(cfg.clutter_density * clutter_area))

    trunk_xy = np.array([[t.x, t.y] for t in scene.trunks])

    def true_position(t: float) -> np.ndarray:
        return np.array([x_start + run_config.speed * t, run_config.trajectory_offset, 0.0])

    def noisy_pose(t: float) -> Pose:
        pos = true_position(t)
        dx, dy = rng.normal(0.0, noise.pose_sigma_m, 2) if noise.pose_sigma_m else (0.0, 0.0)
        dyaw = rng.normal(0.0, noise.pose_sigma_rad) if noise.pose_sigma_rad else 0.0
        return Pose(rotation_z(dyaw), pos + np.array([dx, dy, 0.0]), stamp=t)

    pose_rows: list[tuple[int, Pose]] = []
    detections: list[dict] = []

    for k in range(n_ticks):
        t_ns = k * period_ns
        t = t_ns / 1e9
        t_cloud_ns = t_ns + cloud_offset_ns
        t_cloud = t_cloud_ns / 1e9
        bundle_id = bundle_id_for_stamp_ns(t_ns)

        pose_rows.append((t_ns, noisy_pose(t)))
        pose_rows.append((t_cloud_ns, noisy_pose(t_cloud)))

        # one horizontal jitter vector per trunk per tick, shared by this
        # tick's cloud points and masks so the evidence stays coherent
        jitter = (
            rng.normal(0.0, noise.centroid_jitter_sigma, (len(scene.trunks), 2))
            if noise.centroid_jitter_sigma
            else np.zeros((len(scene.trunks), 2))
        )

        # ---- LiDAR cloud at t + cloud_offset, in the true robot frame
        robot_cloud = true_position(t_cloud)
        points = []
        for i, trunk in enumerate(scene.trunks):
            xy = trunk_xy[i] + jitter[i]
            toward = robot_cloud[:2] - xy
            if float(np.hypot(*toward)) > run_config.lidar_range:
                continue
            points.append(
                _trunk_surface(xy, toward, cfg.trunk_radius, cfg.trunk_height)
            )
        if n_clutter:
            clutter = np.column_stack(
                [
                    rng.uniform(x_start, x_end, n_clutter),
                    rng.uniform(
                        min(run_config.trajectory_offset, 0.0) - 1.0,
                        (cfg.rows - 1) * cfg.row_spacing + 1.0,
                        n_clutter,
                    ),
                    rng.uniform(0.0, 2.0 * cfg.trunk_height, n_clutter),
                ]
            )
            points.append(clutter)
        world = np.vstack(points) if points else np.zeros((0, 3))
        cloud_robot = world - robot_cloud  # heading is +x: pure translation
        runio.write_cloud(clouds_dir / f"{t_cloud_ns}.pcd-ascii", cloud_robot)

        # ---- frames
        for modality in sorted(sensors):
            (out_dir / "frames" / modality / f"{t_ns}.png").write_bytes(
                png_cache[modality]
            )

        # ---- oracle masks and detections
        robot_frame = true_position(t)
        for modality in sorted(sensors):
            cam = sensors[modality]
            masks = []
            for i, trunk in enumerate(scene.trunks):
                axis_robot = np.array(
                    [
                        trunk_xy[i][0] + jitter[i][0] - robot_frame[0],
                        trunk_xy[i][1] + jitter[i][1] - robot_frame[1],
                        0.0,
                    ]
                )
                rect = _silhouette_rect(cam, axis_robot, cfg.trunk_radius, cfg.trunk_height)
                if rect is None:
                    continue
                if noise.mask_fn_rate and rng.random() < noise.mask_fn_rate:
                    continue
                masks.append(
                    {"polygon": rect[0], "score": 1.0, "tree_id": trunk.tree_id}
                )
            if noise.mask_fp_rate and rng.random() < noise.mask_fp_rate:
                masks.append(_distractor_mask(rng, cam))
            if masks:
                frame_dir = oracle_masks_dir / bundle_id
                frame_dir.mkdir(parents=True, exist_ok=True)
                (frame_dir / f"{modality}.json").write_text(
                    json.dumps(
                        {"bundle_id": bundle_id, "modality": modality, "masks": masks},
                        indent=2,
                    )
                    + "\n"
                )
                lo, hi = noise.detector_conf_range
                detections.append(
                    {
                        "bundle_id": bundle_id,
                        "modality": modality,
                        "detections": [
                            {
                                "polygon": m["polygon"],
                                "confidence": round(float(rng.uniform(lo, hi)), 4),
                                "tree_id": m["tree_id"],
                            }
                            for m in masks
                        ],
                    }
                )

    runio.write_poses_csv(out_dir / "poses.csv", pose_rows)
    runio.write_calib(out_dir / "calib.json", sensors)
    runio.write_origin(out_dir / "origin.json", DEFAULT_ORIGIN)
    write_ground_truth(scene, out_dir / "ground_truth.json")
    (out_dir / "oracle" / "detections.json").write_text(
        json.dumps(detections, indent=2) + "\n"
    )
    return out_dir
