"""File-exchange protocol for external annotator (SAM-like) and detector
(YOLO-like) processes.

The contract is a pair of JSON files in an exclusive work_dir:

    request.json  {"kind": "annotate"|"detect",
                   "images": [{"bundle_id", "modality", "path"}, ...]}
    result.json   annotate: [{"bundle_id", "modality",
                              "masks": [{"polygon", "score"}, ...]}, ...]
                  detect:   [{"bundle_id", "modality",
                              "detections": [{"polygon", "confidence"}, ...]}, ...]

Exit code 0 means success; the child receives VINEFUSE_WORKDIR. Only
geometry and metadata cross this boundary, never pixel content.
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import polyops
from .annotate import Mask, MaskSet
from .errors import InvocationError, ProtocolError, ToolError, VinefuseError
from .polyops import Polygon
from .sync import FrameBundle

WORKDIR_ENV = "VINEFUSE_WORKDIR"


@dataclass(frozen=True)
class ToolInvocation:
    tool_cmd: tuple[str, ...]
    work_dir: Path
    timeout: float = 120.0
    kind: str = "annotator"
    stage: str | None = None
    extra_config: dict | None = None  # opaque pass-through (e.g. training params)

    def __post_init__(self):
        if self.timeout <= 0:
            raise VinefuseError("tool timeout must be positive")
        if self.kind not in ("annotator", "detector"):
            raise VinefuseError(f"unknown tool kind '{self.kind}'")
        object.__setattr__(self, "tool_cmd", tuple(self.tool_cmd))
        # the tool runs with cwd=work_dir, so the path must be absolute
        object.__setattr__(self, "work_dir", Path(self.work_dir).resolve())


def _frame_index(bundles: Sequence[FrameBundle]) -> dict[tuple[str, str], tuple[int, int]]:
    dims = {}
    for b in bundles:
        for modality, frame in b.frames.items():
            dims[(b.bundle_id, modality)] = (frame.width, frame.height)
    return dims


def _write_request(invocation: ToolInvocation, kind: str, bundles: Sequence[FrameBundle]) -> None:
    invocation.work_dir.mkdir(parents=True, exist_ok=True)
    images = [
        {"bundle_id": b.bundle_id, "modality": modality, "path": str(frame.image_path)}
        for b in bundles
        for modality, frame in sorted(b.frames.items())
    ]
    payload = {"kind": kind, "images": images}
    if invocation.extra_config is not None:
        payload["config"] = invocation.extra_config
    (invocation.work_dir / "request.json").write_text(json.dumps(payload, indent=2) + "\n")


def _launch(invocation: ToolInvocation) -> None:
    env = dict(os.environ)
    env[WORKDIR_ENV] = str(invocation.work_dir)
    try:
        proc = subprocess.run(
            list(invocation.tool_cmd),
            cwd=invocation.work_dir,
            env=env,
            timeout=invocation.timeout,
            capture_output=True,
            text=True,
        )
    except subprocess.TimeoutExpired as exc:
        raise InvocationError(
            f"tool exceeded {invocation.timeout}s timeout; "
            f"work_dir preserved at {invocation.work_dir}"
        ) from exc
    if proc.returncode != 0:
        raise ToolError(
            f"tool exited {proc.returncode}", stderr=proc.stderr
        )


def _read_result(invocation: ToolInvocation) -> list:
    path = invocation.work_dir / "result.json"
    if not path.exists():
        raise ProtocolError(f"tool wrote no result.json in {invocation.work_dir}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"result.json is not valid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise ProtocolError("result.json must be a JSON array")
    return payload


def _validate_polygon(raw, width: int, height: int, index: int) -> Polygon:
    if not isinstance(raw, list) or len(raw) < 3:
        raise ProtocolError("polygon needs >= 3 vertices", index)
    try:
        poly = polyops.as_polygon(raw)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed polygon: {exc}", index) from exc
    for x, y in poly:
        if not (0 <= x <= width and 0 <= y <= height):
            raise ProtocolError(
                f"polygon vertex ({x}, {y}) outside {width}x{height} image", index
            )
    if polyops.polygon_area(poly) <= 0:
        raise ProtocolError("polygon has zero area", index)
    return poly


def run_annotator(
    bundles: Sequence[FrameBundle], invocation: ToolInvocation
) -> list[MaskSet]:
    """Request masks for every frame of every bundle; one MaskSet per frame
    (empty when the tool reported nothing for it)."""
    dims = _frame_index(bundles)
    _write_request(invocation, "annotate", bundles)
    _launch(invocation)
    payload = _read_result(invocation)

    by_frame: dict[tuple[str, str], list[Mask]] = {key: [] for key in dims}
    for index, record in enumerate(payload):
        try:
            key = (str(record["bundle_id"]), str(record["modality"]))
            raw_masks = record["masks"]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"missing field: {exc}", index) from exc
        if key not in dims:
            raise ProtocolError(f"unrequested frame {key[0]}/{key[1]}", index)
        width, height = dims[key]
        for k, raw in enumerate(raw_masks):
            poly = _validate_polygon(raw.get("polygon"), width, height, index)
            score = raw.get("score")
            if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
                raise ProtocolError(f"score {score!r} not in [0,1]", index)
            by_frame[key].append(
                Mask(
                    mask_id=f"{key[0]}:{key[1]}:{k:03d}",
                    bundle_id=key[0],
                    modality=key[1],
                    polygon=poly,
                    score=float(score),
                    source="annotator",
                )
            )

    masksets = []
    for key in sorted(by_frame):
        width, height = dims[key]
        masksets.append(MaskSet(key[0], key[1], width, height, tuple(by_frame[key])))
    return masksets


@dataclass(frozen=True)
class DetectionRecord:
    bundle_id: str
    modality: str
    polygon: Polygon
    confidence: float
    stage: str

    def __post_init__(self):
        object.__setattr__(self, "polygon", polyops.as_polygon(self.polygon))
        if not 0.0 <= self.confidence <= 1.0:
            raise VinefuseError(f"confidence {self.confidence} not in [0,1]")


def run_detector(
    bundles: Sequence[FrameBundle], invocation: ToolInvocation
) -> list[DetectionRecord]:
    """Same protocol with kind=detect; records carry confidence and are
    stamped with the invocation's stage."""
    if invocation.stage is None:
        raise VinefuseError("detector invocation needs a stage")
    dims = _frame_index(bundles)
    _write_request(invocation, "detect", bundles)
    _launch(invocation)
    payload = _read_result(invocation)

    records: list[DetectionRecord] = []
    for index, record in enumerate(payload):
        try:
            key = (str(record["bundle_id"]), str(record["modality"]))
            raw_dets = record["detections"]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"missing field: {exc}", index) from exc
        if key not in dims:
            raise ProtocolError(f"unrequested frame {key[0]}/{key[1]}", index)
        width, height = dims[key]
        for raw in raw_dets:
            poly = _validate_polygon(raw.get("polygon"), width, height, index)
            conf = raw.get("confidence")
            if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
                raise ProtocolError(f"confidence {conf!r} not in [0,1]", index)
            records.append(
                DetectionRecord(
                    bundle_id=key[0],
                    modality=key[1],
                    polygon=poly,
                    confidence=float(conf),
                    stage=invocation.stage,
                )
            )
    return records


# --- detection record files -------------------------------------------------------


def write_detections(path: Path, records: Sequence[DetectionRecord]) -> Path:
    payload = [
        {
            "bundle_id": r.bundle_id,
            "modality": r.modality,
            "polygon": [[x, y] for x, y in r.polygon],
            "confidence": r.confidence,
            "stage": r.stage,
        }
        for r in records
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
    return Path(path)


def read_detections(path: Path) -> list[DetectionRecord]:
    payload = json.loads(Path(path).read_text())
    return [
        DetectionRecord(
            bundle_id=str(r["bundle_id"]),
            modality=str(r["modality"]),
            polygon=r["polygon"],
            confidence=float(r["confidence"]),
            stage=str(r.get("stage", "S")),
        )
        for r in payload
    ]
