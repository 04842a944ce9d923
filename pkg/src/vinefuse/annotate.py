"""Mask filtering: contour simplification, standing-rectangle shape test,
frame-occupancy gate, and IoU-based de-duplication.

All filters only remove masks and preserve input order among survivors, so
they are idempotent and freely re-runnable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import polyops
from .errors import DegeneratePolygonError, VinefuseError
from .polyops import Polygon

MASK_SOURCES = (
    "annotator",
    "detector_stage_S",
    "detector_stage_Splus",
    "detector_stage_T",
    "oracle",
    "human",
)

DEFAULT_MIN_ASPECT = 1.2
DEFAULT_MIN_VERTICES = 4
DEFAULT_EPSILON_FRAC = 0.02
DEFAULT_OCCUPANCY_MIN = 0.05
DEFAULT_OCCUPANCY_MAX = 0.40
DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Mask:
    mask_id: str
    bundle_id: str
    modality: str
    polygon: Polygon
    score: float
    source: str = "annotator"

    def __post_init__(self):
        object.__setattr__(self, "polygon", polyops.as_polygon(self.polygon))
        if len(self.polygon) < 3:
            raise DegeneratePolygonError(
                f"mask {self.mask_id}: polygon has {len(self.polygon)} vertices"
            )
        if not 0.0 <= self.score <= 1.0:
            raise VinefuseError(f"mask {self.mask_id}: score {self.score} not in [0,1]")
        if self.source not in MASK_SOURCES:
            raise VinefuseError(f"mask {self.mask_id}: unknown source '{self.source}'")

    @property
    def area(self) -> float:
        return polyops.polygon_area(self.polygon)

    def bbox(self) -> tuple[float, float, float, float]:
        return polyops.polygon_bbox(self.polygon)


@dataclass(frozen=True)
class MaskSet:
    bundle_id: str
    modality: str
    width: int
    height: int
    masks: tuple[Mask, ...]

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        for m in self.masks:
            if m.bundle_id != self.bundle_id or m.modality != self.modality:
                raise VinefuseError(
                    f"mask {m.mask_id} does not belong to frame "
                    f"{self.bundle_id}/{self.modality}"
                )

    def __len__(self) -> int:
        return len(self.masks)

    def with_masks(self, masks: Iterable[Mask]) -> "MaskSet":
        return replace(self, masks=tuple(masks))


def validate_mask_in_bounds(mask: Mask, width: int, height: int) -> bool:
    return all(0 <= x <= width and 0 <= y <= height for x, y in mask.polygon)


def simplify_contour(polygon: Sequence[Sequence[float]], epsilon_frac: float = DEFAULT_EPSILON_FRAC) -> Polygon:
    """Douglas-Peucker with tolerance epsilon_frac x perimeter; keeps at
    least 80% of the enclosed area (falls back to the input otherwise)."""
    return polyops.simplify_polygon(polygon, epsilon_frac)


def shape_filter(
    masks: MaskSet,
    min_aspect: float = DEFAULT_MIN_ASPECT,
    min_vertices: int = DEFAULT_MIN_VERTICES,
) -> MaskSet:
    """Keep standing rectangle-ish masks: enough (simplified) vertices and a
    bounding box at least ``min_aspect`` taller than wide."""
    survivors = []
    for m in masks.masks:
        if len(m.polygon) < min_vertices:
            continue
        x0, y0, x1, y1 = m.bbox()
        w = x1 - x0
        h = y1 - y0
        if w <= 0:
            continue
        if h / w >= min_aspect:
            survivors.append(m)
    return masks.with_masks(survivors)


def occupancy_filter(
    masks: MaskSet,
    min_frac: float = DEFAULT_OCCUPANCY_MIN,
    max_frac: float = DEFAULT_OCCUPANCY_MAX,
) -> MaskSet:
    """Keep masks whose polygon area covers [min_frac, max_frac] of the
    frame (closed interval: boundary values survive)."""
    frame_area = float(masks.width * masks.height)
    survivors = [
        m for m in masks.masks if min_frac <= m.area / frame_area <= max_frac
    ]
    return masks.with_masks(survivors)


def mask_iou(a: Mask, b: Mask, width: int | None = None, height: int | None = None) -> float:
    """Rasterized IoU of two masks of the same frame."""
    return polyops.raster_iou(a.polygon, b.polygon, width, height)


def iou_dedup(masks: MaskSet, threshold: float = DEFAULT_IOU_THRESHOLD) -> MaskSet:
    """Greedy de-duplication: visit masks by (score desc, area desc, id asc)
    and keep one iff its IoU with every kept mask stays <= threshold.
    Survivors come out in input order."""
    order = sorted(
        range(len(masks.masks)),
        key=lambda k: (-masks.masks[k].score, -masks.masks[k].area, masks.masks[k].mask_id),
    )
    kept: list[int] = []
    for k in order:
        candidate = masks.masks[k]
        if all(
            mask_iou(candidate, masks.masks[j], masks.width, masks.height) <= threshold
            for j in kept
        ):
            kept.append(k)
    kept_set = set(kept)
    return masks.with_masks(m for k, m in enumerate(masks.masks) if k in kept_set)


def apply_filters(
    masks: MaskSet,
    epsilon_frac: float = DEFAULT_EPSILON_FRAC,
    min_aspect: float = DEFAULT_MIN_ASPECT,
    min_vertices: int = DEFAULT_MIN_VERTICES,
    occupancy_min: float = DEFAULT_OCCUPANCY_MIN,
    occupancy_max: float = DEFAULT_OCCUPANCY_MAX,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MaskSet:
    """Full filter chain: simplify contours, then shape, occupancy and IoU
    gates. Masks that degenerate under simplification are dropped."""
    simplified = []
    for m in masks.masks:
        try:
            poly = simplify_contour(m.polygon, epsilon_frac)
        except DegeneratePolygonError:
            continue
        simplified.append(replace(m, polygon=poly))
    out = masks.with_masks(simplified)
    out = shape_filter(out, min_aspect=min_aspect, min_vertices=min_vertices)
    out = occupancy_filter(out, min_frac=occupancy_min, max_frac=occupancy_max)
    return iou_dedup(out, threshold=iou_threshold)


# --- mask interchange files ---------------------------------------------------


def write_maskset(masks_dir: Path, masks: MaskSet) -> Path:
    """`masks/<bundle_id>/<modality>.json`: array of mask records."""
    out_dir = Path(masks_dir) / masks.bundle_id
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = [
        {
            "mask_id": m.mask_id,
            "polygon": [[x, y] for x, y in m.polygon],
            "score": m.score,
            "source": m.source,
        }
        for m in masks.masks
    ]
    path = out_dir / f"{masks.modality}.json"
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_maskset(
    masks_dir: Path, bundle_id: str, modality: str, width: int, height: int
) -> MaskSet:
    path = Path(masks_dir) / bundle_id / f"{modality}.json"
    records = json.loads(path.read_text()) if path.exists() else []
    masks = tuple(
        Mask(
            mask_id=str(rec["mask_id"]),
            bundle_id=bundle_id,
            modality=modality,
            polygon=rec["polygon"],
            score=float(rec["score"]),
            source=str(rec.get("source", "annotator")),
        )
        for rec in records
    )
    return MaskSet(bundle_id, modality, width, height, masks)
