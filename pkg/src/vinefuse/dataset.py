"""Staged pseudo-label store: seeded splits, modality balance,
confidence-gated label merging, curation verdicts, and export."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import polyops
from .errors import DatasetError, LabelNotFoundError
from .polyops import Polygon

STAGES = ("S", "S+", "T")
SPLITS = ("train", "eval", "test")
DEFAULT_RATIOS = (0.7, 0.2, 0.1)
DEFAULT_CONF_THRESHOLD = 0.6
DEFAULT_MERGE_IOU = 0.5
VERDICTS = ("approved", "rejected")


def next_stage(stage: str) -> str:
    k = STAGES.index(stage)
    if k + 1 >= len(STAGES):
        raise DatasetError(f"stage '{stage}' has no successor")
    return STAGES[k + 1]


@dataclass
class Label:
    polygon: Polygon
    confidence: float
    provenance: str
    category: str = "trunk"
    curation: str = "pending"
    mask_id: str | None = None

    def __post_init__(self):
        self.polygon = polyops.as_polygon(self.polygon)

    def to_json(self) -> dict:
        return {
            "polygon": [[x, y] for x, y in self.polygon],
            "confidence": self.confidence,
            "provenance": self.provenance,
            "category": self.category,
            "curation": self.curation,
            "mask_id": self.mask_id,
        }

    @staticmethod
    def from_json(raw: dict) -> "Label":
        return Label(
            polygon=raw["polygon"],
            confidence=float(raw["confidence"]),
            provenance=str(raw["provenance"]),
            category=str(raw.get("category", "trunk")),
            curation=str(raw.get("curation", "pending")),
            mask_id=raw.get("mask_id"),
        )


@dataclass
class LabeledExample:
    bundle_id: str
    modality: str
    width: int
    height: int
    labels: list[Label] = field(default_factory=list)
    split: str = "train"

    @property
    def key(self) -> tuple[str, str]:
        return (self.bundle_id, self.modality)

    def to_json(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "modality": self.modality,
            "width": self.width,
            "height": self.height,
            "split": self.split,
            "labels": [lb.to_json() for lb in self.labels],
        }

    @staticmethod
    def from_json(raw: dict) -> "LabeledExample":
        return LabeledExample(
            bundle_id=str(raw["bundle_id"]),
            modality=str(raw["modality"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            labels=[Label.from_json(lb) for lb in raw["labels"]],
            split=str(raw["split"]),
        )


@dataclass
class DatasetManifest:
    examples: dict[tuple[str, str], LabeledExample]
    stage: str = "S"
    seed: int = 0
    split_ratios: tuple[float, float, float] = DEFAULT_RATIOS
    parent_digest: str | None = None

    def modalities(self) -> list[str]:
        return sorted({m for _, m in self.examples})

    def split_counts(self) -> dict[str, dict[str, int]]:
        counts: dict[str, dict[str, int]] = {}
        for ex in self.examples.values():
            counts.setdefault(ex.modality, {s: 0 for s in SPLITS})[ex.split] += 1
        return counts

    def label_counts(self) -> dict[str, int]:
        counts = {"pending": 0, "approved": 0, "rejected": 0}
        for ex in self.examples.values():
            for lb in ex.labels:
                counts[lb.curation] += 1
        return counts

    def to_json(self) -> dict:
        ordered = sorted(self.examples.values(), key=lambda e: e.key)
        return {
            "stage": self.stage,
            "seed": self.seed,
            "split_ratios": list(self.split_ratios),
            "parent_digest": self.parent_digest,
            "examples": [ex.to_json() for ex in ordered],
        }

    @staticmethod
    def from_json(raw: dict) -> "DatasetManifest":
        examples = {}
        for rec in raw["examples"]:
            ex = LabeledExample.from_json(rec)
            examples[ex.key] = ex
        return DatasetManifest(
            examples=examples,
            stage=str(raw["stage"]),
            seed=int(raw["seed"]),
            split_ratios=tuple(raw["split_ratios"]),
            parent_digest=raw.get("parent_digest"),
        )

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _modality_rng_seed(seed: int, modality: str) -> int:
    h = hashlib.sha256(f"{seed}:{modality}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def split(
    examples: Iterable[LabeledExample],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> DatasetManifest:
    """Seeded per-modality split: each split gets floor(ratio * n) examples,
    remainder assigned train-first. Refuses modalities with < 10 examples
    (a 10% test slice must stay non-empty)."""
    import random

    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DatasetError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)}")

    by_modality: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        by_modality.setdefault(ex.modality, []).append(ex)
    for modality, group in by_modality.items():
        if len(group) < 10:
            raise DatasetError(
                f"modality '{modality}' has only {len(group)} examples; "
                "need >= 10 to honor the 10% test split"
            )

    out: dict[tuple[str, str], LabeledExample] = {}
    for modality in sorted(by_modality):
        group = sorted(by_modality[modality], key=lambda e: e.key)
        rng = random.Random(_modality_rng_seed(seed, modality))
        rng.shuffle(group)
        n = len(group)
        counts = [int(r * n) for r in ratios]
        remainder = n - sum(counts)
        for k in range(remainder):  # train-first
            counts[k % 3] += 1
        cursor = 0
        for split_name, count in zip(SPLITS, counts):
            for ex in group[cursor : cursor + count]:
                clone = deepcopy(ex)
                clone.split = split_name
                out[clone.key] = clone
            cursor += count
    return DatasetManifest(examples=out, stage="S", seed=seed, split_ratios=ratios)


@dataclass(frozen=True)
class MergeSkip:
    bundle_id: str
    modality: str
    reason: str


def merge_pseudo_labels(
    manifest: DatasetManifest,
    detections: Sequence,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    iou_threshold: float = DEFAULT_MERGE_IOU,
) -> tuple[DatasetManifest, list[MergeSkip]]:
    """Advance the manifest one stage, adding each detection as an approved
    train label iff its confidence clears ``conf_threshold`` and it overlaps
    no existing non-rejected label at IoU >= ``iou_threshold``.

    Detections aimed at eval/test frames are refused per-frame and logged as
    skips; eval/test label sets come out bitwise unchanged.
    """
    new = DatasetManifest(
        examples=deepcopy(manifest.examples),
        stage=next_stage(manifest.stage),
        seed=manifest.seed,
        split_ratios=manifest.split_ratios,
        parent_digest=manifest.digest(),
    )
    skips: list[MergeSkip] = []
    for det in detections:
        key = (det.bundle_id, det.modality)
        ex = new.examples.get(key)
        if ex is None:
            raise DatasetError(
                f"detection references unknown frame {det.bundle_id}/{det.modality}"
            )
        if ex.split != "train":
            skips.append(MergeSkip(det.bundle_id, det.modality, f"split={ex.split}"))
            continue
        if det.confidence < conf_threshold:
            skips.append(MergeSkip(det.bundle_id, det.modality, "low-confidence"))
            continue
        duplicate = any(
            lb.curation != "rejected"
            and polyops.raster_iou(det.polygon, lb.polygon, ex.width, ex.height)
            >= iou_threshold
            for lb in ex.labels
        )
        if duplicate:
            skips.append(MergeSkip(det.bundle_id, det.modality, "duplicate"))
            continue
        ex.labels.append(
            Label(
                polygon=det.polygon,
                confidence=float(det.confidence),
                provenance=f"detector_stage_{manifest.stage.replace('+', 'plus')}",
                curation="approved",
            )
        )
    return new, skips


def record_verdict(
    manifest: DatasetManifest,
    bundle_id: str,
    modality: str,
    label_index: int,
    verdict: str,
) -> dict:
    """Apply a curation verdict in place; returns the audit entry."""
    if verdict not in VERDICTS:
        raise DatasetError(f"verdict must be one of {VERDICTS}, got '{verdict}'")
    ex = manifest.examples.get((bundle_id, modality))
    if ex is None or not 0 <= label_index < len(ex.labels):
        raise LabelNotFoundError(
            f"no label {bundle_id}/{modality}[{label_index}]"
        )
    prior = ex.labels[label_index].curation
    ex.labels[label_index].curation = verdict
    return {
        "ts": time.time(),
        "bundle_id": bundle_id,
        "modality": modality,
        "label_index": label_index,
        "verdict": verdict,
        "prior": prior,
    }


def export(manifest: DatasetManifest, out_dir: Path | str) -> Path:
    """Write `labels/<split>/<bundle>_<modality>.txt` (one normalized polygon
    line per approved label) plus a manifest summary. Deterministic."""
    out_dir = Path(out_dir)
    for split_name in SPLITS:
        (out_dir / "labels" / split_name).mkdir(parents=True, exist_ok=True)
    for ex in sorted(manifest.examples.values(), key=lambda e: e.key):
        lines = []
        for lb in ex.labels:
            if lb.curation != "approved":
                continue
            coords = []
            for x, y in lb.polygon:
                coords.append(f"{x / ex.width:.6f}")
                coords.append(f"{y / ex.height:.6f}")
            lines.append("0 " + " ".join(coords))
        path = out_dir / "labels" / ex.split / f"{ex.bundle_id}_{ex.modality}.txt"
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
    summary = {
        "stage": manifest.stage,
        "seed": manifest.seed,
        "split_ratios": list(manifest.split_ratios),
        "parent_digest": manifest.parent_digest,
        "digest": manifest.digest(),
        "split_counts": manifest.split_counts(),
        "label_counts": manifest.label_counts(),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return out_dir


class DatasetStore:
    """Single-writer persistence for a manifest plus its curation audit log.

    All mutations funnel through one lock; reads hand out the live manifest
    (callers treat it as a snapshot).
    """

    MANIFEST_NAME = "manifest.json"
    AUDIT_NAME = "curation_log.jsonl"

    def __init__(self, directory: Path | str, manifest: DatasetManifest | None = None):
        self.directory = Path(directory)
        self._lock = threading.Lock()
        if manifest is not None:
            self.manifest = manifest
            self.directory.mkdir(parents=True, exist_ok=True)
            self.save()
        else:
            path = self.directory / self.MANIFEST_NAME
            if not path.exists():
                raise DatasetError(f"no manifest at {path}")
            self.manifest = DatasetManifest.from_json(json.loads(path.read_text()))
        self.revision = self._count_audit_lines()

    def _count_audit_lines(self) -> int:
        path = self.directory / self.AUDIT_NAME
        if not path.exists():
            return 0
        return sum(1 for _ in path.open())

    def save(self) -> None:
        path = self.directory / self.MANIFEST_NAME
        path.write_text(json.dumps(self.manifest.to_json(), indent=2, sort_keys=True) + "\n")

    def record_verdict(
        self, bundle_id: str, modality: str, label_index: int, verdict: str
    ) -> dict:
        return self.record_verdicts([(bundle_id, modality, label_index, verdict)])[0]

    def record_verdicts(
        self, verdicts: Sequence[tuple[str, str, int, str]]
    ) -> list[dict]:
        """Apply a batch of verdicts under one lock with a single manifest
        save; the audit log still gets one line per verdict."""
        with self._lock:
            entries = [
                record_verdict(self.manifest, bundle_id, modality, index, verdict)
                for bundle_id, modality, index, verdict in verdicts
            ]
            if entries:
                with (self.directory / self.AUDIT_NAME).open("a") as fh:
                    for entry in entries:
                        fh.write(json.dumps(entry, sort_keys=True) + "\n")
                self.save()
                self.revision += len(entries)
            return entries

    def approve_all_pending(self) -> int:
        pending = [
            (ex.bundle_id, ex.modality, k, "approved")
            for ex in sorted(self.manifest.examples.values(), key=lambda e: e.key)
            for k, lb in enumerate(ex.labels)
            if lb.curation == "pending"
        ]
        self.record_verdicts(pending)
        return len(pending)

    def audit_entries(self) -> list[dict]:
        path = self.directory / self.AUDIT_NAME
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line]
