"""Detection metrics (precision/recall, mAP50, mAP50:95) and localization
metrics (L2 / MAE / RMSE / recall within a candidate radius, detections at
the match threshold).

Localization recall is reported as the exact ground-truth-side ratio
(matched trees within the radius over total surveyed trees); no rounding or
bucketing is applied."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import polyops
from .errors import InputError

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
DEFAULT_CONF_CUTOFF = 0.25
DEFAULT_MATCH_THRESHOLD = 0.15  # m, successful-detection distance
DEFAULT_RADIUS = 0.5  # m, candidate radius around a ground-truth tree


@dataclass(frozen=True)
class DetectionEvalReport:
    precision: float
    recall: float
    map50: float
    map50_95: float
    ap_by_threshold: dict[float, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "mAP50": self.map50,
            "mAP50_95": self.map50_95,
            "ap_by_threshold": {f"{t:.2f}": v for t, v in self.ap_by_threshold.items()},
        }


@dataclass(frozen=True)
class LocalizationEvalReport:
    l2_mean: float | None
    mae_r: float | None
    rmse_r: float | None
    recall_r: float
    detected: int
    total: int

    def to_json(self) -> dict:
        return {
            "l2_mean": self.l2_mean,
            "mae_r": self.mae_r,
            "rmse_r": self.rmse_r,
            "recall_r": self.recall_r,
            "detected": self.detected,
            "total": self.total,
        }


@dataclass(frozen=True)
class GroundTruthTree:
    tree_id: str
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=float).reshape(3)
        )


def read_ground_truth(path: Path) -> list[GroundTruthTree]:
    payload = json.loads(Path(path).read_text())
    return [
        GroundTruthTree(str(r["tree_id"]), [r["x"], r["y"], r["z"]]) for r in payload
    ]


# --- detection metrics --------------------------------------------------------------


def _group_predictions(predictions: Sequence) -> dict[tuple[str, str], list]:
    grouped: dict[tuple[str, str], list] = {}
    for p in predictions:
        grouped.setdefault((p.bundle_id, p.modality), []).append(p)
    return grouped


def _normalize_ground_truth(ground_truth) -> dict[tuple[str, str], list]:
    """Accepts {frame_key: [polygons]} or [{bundle_id, modality, labels}]."""
    if isinstance(ground_truth, Mapping):
        return {k: list(v) for k, v in ground_truth.items()}
    out: dict[tuple[str, str], list] = {}
    for rec in ground_truth:
        key = (str(rec["bundle_id"]), str(rec["modality"]))
        if key in out:
            raise InputError(f"duplicate ground-truth frame {key[0]}/{key[1]}")
        out[key] = list(rec["labels"])
    return out


def _iou_table(
    predictions: Sequence, gt: dict[tuple[str, str], list]
) -> dict[int, list[float]]:
    """IoU of every prediction against its frame's ground-truth labels,
    keyed by original prediction index. Computed once, shared by all
    matching thresholds."""
    table: dict[int, list[float]] = {}
    for pk, pred in enumerate(predictions):
        labels = gt.get((pred.bundle_id, pred.modality), [])
        table[pk] = [polyops.raster_iou(pred.polygon, poly) for poly in labels]
    return table


def _match_flags(
    predictions: Sequence,
    gt: dict[tuple[str, str], list],
    iou_threshold: float,
    iou_table: dict[int, list[float]],
) -> list[tuple[float, bool, tuple]]:
    """(confidence, matched, tie_key) per prediction, greedy best-IoU matching
    in confidence order within each frame."""
    order = sorted(
        enumerate(predictions),
        key=lambda kv: (-kv[1].confidence, kv[1].bundle_id, kv[1].modality, kv[0]),
    )
    taken: dict[tuple[str, str], set[int]] = {}
    flags = []
    for pk, pred in order:
        key = (pred.bundle_id, pred.modality)
        used = taken.setdefault(key, set())
        best_gk = -1
        best_iou = 0.0
        for gk, value in enumerate(iou_table[pk]):
            if gk in used:
                continue
            if value > best_iou:
                best_iou = value
                best_gk = gk
        matched = best_gk >= 0 and best_iou >= iou_threshold
        if matched:
            used.add(best_gk)
        flags.append((pred.confidence, matched, (pred.bundle_id, pred.modality, pk)))
    return flags


def _average_precision(flags: Sequence[tuple[float, bool, tuple]], total_gt: int) -> float:
    """101-point interpolated AP over the (confidence-ordered) match flags."""
    if total_gt == 0:
        raise InputError("ground truth has no labels")
    if not flags:
        return 0.0
    tp = 0
    fp = 0
    recalls = []
    precisions = []
    for _conf, matched, _tie in flags:
        if matched:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / total_gt)
        precisions.append(tp / (tp + fp))
    recalls = np.array(recalls)
    precisions = np.array(precisions)
    # precision envelope: best precision at recall >= r
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    grid = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recalls, grid - 1e-12, side="left")
    ap = float(np.where(idx < len(precisions), precisions[np.minimum(idx, len(precisions) - 1)], 0.0).sum()) / 101.0
    return ap


def detection_metrics(
    predictions: Sequence,
    ground_truth,
    conf_cutoff: float = DEFAULT_CONF_CUTOFF,
) -> DetectionEvalReport:
    """AP over IoU thresholds 0.50:0.05:0.95 with greedy confidence-ordered
    matching; scalar precision/recall at IoU 0.5 over predictions with
    confidence >= ``conf_cutoff``."""
    gt = _normalize_ground_truth(ground_truth)
    total_gt = sum(len(v) for v in gt.values())
    if total_gt == 0:
        raise InputError("ground truth has no labels")
    table = _iou_table(predictions, gt)

    ap_by_threshold = {}
    for threshold in IOU_THRESHOLDS:
        flags = _match_flags(predictions, gt, threshold, table)
        ap_by_threshold[threshold] = _average_precision(flags, total_gt)

    confident = [p for p in predictions if p.confidence >= conf_cutoff]
    conf_table = _iou_table(confident, gt)
    flags = _match_flags(confident, gt, 0.5, conf_table)
    tp = sum(1 for _c, matched, _t in flags if matched)
    precision = tp / len(flags) if flags else 0.0
    recall = tp / total_gt
    return DetectionEvalReport(
        precision=precision,
        recall=recall,
        map50=ap_by_threshold[0.5],
        map50_95=sum(ap_by_threshold.values()) / len(ap_by_threshold),
        ap_by_threshold=ap_by_threshold,
    )


# --- localization metrics -------------------------------------------------------------


def localization_metrics(
    estimates: Sequence,
    ground_truth: Sequence[GroundTruthTree],
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
    radius: float = DEFAULT_RADIUS,
) -> LocalizationEvalReport:
    """One-to-one ascending-distance assignment of estimates to ground-truth
    trees. ``detected`` counts pairs within ``match_threshold``; the error
    stats and recall consider pairs within ``radius``."""
    if not ground_truth:
        raise InputError("ground truth is empty")
    pairs = []
    for e in estimates:
        ep = np.asarray(e.position, dtype=float)
        for g in ground_truth:
            d = float(np.linalg.norm(ep - g.position))
            pairs.append((d, g.tree_id, e.tree_id))
    pairs.sort()
    used_gt: set[str] = set()
    used_est: set[str] = set()
    matched: list[tuple[float, str, str]] = []
    for d, g_id, e_id in pairs:
        if g_id in used_gt or e_id in used_est:
            continue
        used_gt.add(g_id)
        used_est.add(e_id)
        matched.append((d, g_id, e_id))

    detected = sum(1 for d, _g, _e in matched if d <= match_threshold)
    in_radius = [d for d, _g, _e in matched if d <= radius]
    if in_radius:
        l2_mean = float(np.mean(in_radius))
        mae = float(np.mean(np.abs(in_radius)))
        rmse = float(math.sqrt(np.mean(np.square(in_radius))))
    else:
        l2_mean = mae = rmse = None
    recall = len(in_radius) / len(ground_truth)
    return LocalizationEvalReport(
        l2_mean=l2_mean,
        mae_r=mae,
        rmse_r=rmse,
        recall_r=recall,
        detected=detected,
        total=len(ground_truth),
    )


def write_eval_report(
    path: Path,
    localization: LocalizationEvalReport | None = None,
    detection: DetectionEvalReport | None = None,
    config_echo: dict | None = None,
) -> Path:
    payload = {
        "localization": localization.to_json() if localization else None,
        "detection": detection.to_json() if detection else None,
        "config": config_echo or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return Path(path)
