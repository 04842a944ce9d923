"""Pipeline configuration: one JSON file collecting every threshold, tool
command, and simulator setting, echoed into every output artifact."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .simulate import NoiseConfig, RunConfig, SceneConfig


@dataclass
class Thresholds:
    sync_tolerance: float = 0.05
    epsilon_frac: float = 0.02
    min_aspect: float = 1.2
    min_vertices: int = 4
    occupancy_min: float = 0.05
    occupancy_max: float = 0.40
    iou_dedup: float = 0.5
    two_sigma: bool = True
    min_points: int = 5
    association: float = 0.10
    conf_threshold: float = 0.6
    merge_iou: float = 0.5
    cluster_radius: float = 0.5
    min_obs: int = 3
    match_threshold: float = 0.15
    radius: float = 0.5
    conf_cutoff: float = 0.25

    def __post_init__(self):
        checks = [
            (0 < self.sync_tolerance <= 1.0, "sync_tolerance in (0, 1]"),
            (0 <= self.epsilon_frac < 0.5, "epsilon_frac in [0, 0.5)"),
            (self.min_aspect > 0, "min_aspect > 0"),
            (self.min_vertices >= 3, "min_vertices >= 3"),
            (
                0 <= self.occupancy_min <= self.occupancy_max <= 1.0,
                "occupancy bounds ordered in [0, 1]",
            ),
            (0 <= self.iou_dedup <= 1, "iou_dedup in [0, 1]"),
            (self.min_points >= 1, "min_points >= 1"),
            (self.association > 0, "association > 0"),
            (0 <= self.conf_threshold <= 1, "conf_threshold in [0, 1]"),
            (0 <= self.merge_iou <= 1, "merge_iou in [0, 1]"),
            (self.cluster_radius > 0, "cluster_radius > 0"),
            (self.min_obs >= 1, "min_obs >= 1"),
            (self.match_threshold > 0, "match_threshold > 0"),
            (self.radius > 0, "radius > 0"),
            (0 <= self.conf_cutoff <= 1, "conf_cutoff in [0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(f"threshold constraint violated: {message}")


@dataclass
class PipelineConfig:
    seed: int = 0
    run_dir: str | None = None  # existing recording; None means simulate one
    calib: str | None = None  # defaults to <run_dir>/calib.json
    anchor_modality: str = "visual"
    scene: SceneConfig = field(default_factory=SceneConfig)
    run: RunConfig = field(default_factory=RunConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    annotator_cmd: list[str] | None = None  # None -> built-in mock on the oracle
    detector_cmd: list[str] | None = None
    tool_timeout: float = 120.0
    # recorded and passed through to the external detector, never interpreted
    detector_training: dict = field(
        default_factory=lambda: {"batch_size": 32, "epochs": 100}
    )
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    serve_port: int = 8714

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["scene"] = asdict(self.scene)
        payload["run"] = asdict(self.run)
        payload["run"]["noise"] = asdict(self.run.noise)
        payload["thresholds"] = asdict(self.thresholds)
        payload["split_ratios"] = list(self.split_ratios)
        return payload

    @staticmethod
    def from_json(raw: dict) -> "PipelineConfig":
        def build(cls, data, **overrides):
            data = dict(data or {})
            names = {f.name for f in fields(cls)}
            unknown = set(data) - names
            if unknown:
                raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
            data.update(overrides)
            return cls(**data)

        try:
            run_raw = dict(raw.get("run") or {})
            noise_raw = dict(run_raw.pop("noise", None) or {})
            if "detector_conf_range" in noise_raw:
                noise_raw["detector_conf_range"] = tuple(noise_raw["detector_conf_range"])
            noise = build(NoiseConfig, noise_raw)
            run_cfg = build(RunConfig, run_raw, noise=noise)
            cfg = PipelineConfig(
                seed=int(raw.get("seed", 0)),
                run_dir=raw.get("run_dir"),
                calib=raw.get("calib"),
                anchor_modality=str(raw.get("anchor_modality", "visual")),
                scene=build(SceneConfig, raw.get("scene")),
                run=run_cfg,
                thresholds=build(Thresholds, raw.get("thresholds")),
                annotator_cmd=raw.get("annotator_cmd"),
                detector_cmd=raw.get("detector_cmd"),
                tool_timeout=float(raw.get("tool_timeout", 120.0)),
                detector_training=dict(
                    raw.get("detector_training", {"batch_size": 32, "epochs": 100})
                ),
                split_ratios=tuple(raw.get("split_ratios", (0.7, 0.2, 0.1))),
                serve_port=int(raw.get("serve_port", 8714)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pipeline config: {exc}") from exc
        return cfg

    @staticmethod
    def load(path: Path | str) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return PipelineConfig.from_json(raw)

    def save(self, path: Path | str) -> Path:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return Path(path)
