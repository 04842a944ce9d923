"""Lift filtered 2D masks to 3D through projected LiDAR points and associate
them across modalities by centroid proximity."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import polyops
from .annotate import Mask
from .geometry import Projection

DEFAULT_MIN_POINTS = 5
DEFAULT_ASSOCIATION_THRESHOLD = 0.10  # m, 3D centroid distance


@dataclass(frozen=True)
class LiftedMask:
    mask: Mask
    inlier_points: np.ndarray  # (n_inlier, 3), robot frame at bundle time
    centroid: np.ndarray  # (3,)
    range_mean: float
    range_stddev: float
    n_raw: int
    n_inlier: int

    @property
    def mask_id(self) -> str:
        return self.mask.mask_id

    @property
    def modality(self) -> str:
        return self.mask.modality


@dataclass(frozen=True)
class AssociationSet:
    set_id: str
    members: dict[str, LiftedMask]  # modality -> member
    fused_centroid: np.ndarray

    @property
    def span(self) -> int:
        return len(self.members)


def lift_mask(
    mask: Mask,
    projection: Projection,
    points: np.ndarray,
    min_points: int = DEFAULT_MIN_POINTS,
    two_sigma: bool = True,
) -> LiftedMask | None:
    """Collect projected points falling inside the mask polygon, drop range
    outliers beyond 2 sigma of the range mean (population stddev, single
    pass; skipped when ``two_sigma`` is off), and average the survivors in
    the robot frame.

    Returns None (a rejection, not an error) when fewer than ``min_points``
    survive.
    """
    if len(projection) == 0:
        return None
    inside = polyops.points_in_polygon(projection.u, projection.v, mask.polygon)
    n_raw = int(inside.sum())
    if n_raw == 0:
        return None
    ranges = projection.ranges[inside]
    if two_sigma:
        mu = float(ranges.mean())
        sigma = float(ranges.std())
        keep = np.abs(ranges - mu) <= 2.0 * sigma
    else:
        keep = np.ones(len(ranges), dtype=bool)
    n_inlier = int(keep.sum())
    if n_inlier < min_points:
        return None
    idx = projection.indices[inside][keep]
    inliers = np.asarray(points, dtype=float)[idx]
    kept_ranges = ranges[keep]
    return LiftedMask(
        mask=mask,
        inlier_points=inliers,
        centroid=inliers.mean(axis=0),
        range_mean=float(kept_ranges.mean()),
        range_stddev=float(kept_ranges.std()),
        n_raw=n_raw,
        n_inlier=n_inlier,
    )


def _pair_key(a: LiftedMask, b: LiftedMask) -> tuple[str, str]:
    ka = (a.modality, a.mask_id)
    kb = (b.modality, b.mask_id)
    return (ka[1], kb[1]) if ka <= kb else (kb[1], ka[1])


def associate_bundle(
    lifted: Mapping[str, Sequence[LiftedMask]],
    threshold: float = DEFAULT_ASSOCIATION_THRESHOLD,
) -> list[AssociationSet]:
    """Greedy ascending-distance merging of cross-modal centroid pairs.

    A pair merges when both masks are unassigned, or when one extends a set
    that lacks its modality and stays within ``threshold`` of every member
    (strict pairwise reading). Leftovers become singletons. Deterministic:
    candidate pairs are ordered by (distance, mask ids) and input order is
    irrelevant.
    """
    items: list[LiftedMask] = []
    for modality in sorted(lifted):
        items.extend(sorted(lifted[modality], key=lambda lm: lm.mask_id))

    pairs = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            a, b = items[i], items[j]
            if a.modality == b.modality:
                continue
            d = float(np.linalg.norm(a.centroid - b.centroid))
            if d < threshold:
                pairs.append((d, *_pair_key(a, b), i, j))
    pairs.sort(key=lambda p: p[:3])

    assignment: dict[int, int] = {}  # item index -> group index
    groups: list[list[int]] = []

    def fits(group: list[int], k: int) -> bool:
        cand = items[k]
        if any(items[m].modality == cand.modality for m in group):
            return False
        return all(
            float(np.linalg.norm(items[m].centroid - cand.centroid)) < threshold
            for m in group
        )

    for _d, _ka, _kb, i, j in pairs:
        gi = assignment.get(i)
        gj = assignment.get(j)
        if gi is None and gj is None:
            groups.append([i, j])
            assignment[i] = assignment[j] = len(groups) - 1
        elif gi is not None and gj is None:
            if fits(groups[gi], j):
                groups[gi].append(j)
                assignment[j] = gi
        elif gj is not None and gi is None:
            if fits(groups[gj], i):
                groups[gj].append(i)
                assignment[i] = gj
        # both already assigned: skip

    for k in range(len(items)):
        if k not in assignment:
            groups.append([k])
            assignment[k] = len(groups) - 1

    def group_key(group: list[int]) -> tuple:
        return tuple(sorted((items[k].modality, items[k].mask_id) for k in group))

    sets = []
    for n, group in enumerate(sorted(groups, key=group_key)):
        members = {items[k].modality: items[k] for k in sorted(group)}
        centroid = np.mean([m.centroid for m in members.values()], axis=0)
        sets.append(
            AssociationSet(set_id=f"s{n:03d}", members=members, fused_centroid=centroid)
        )
    return sets


# --- association output files ----------------------------------------------------


def write_associations(assoc_dir: Path, bundle_id: str, sets: Sequence[AssociationSet]) -> Path:
    """`associations/<bundle_id>.json`: array of association records."""
    assoc_dir = Path(assoc_dir)
    assoc_dir.mkdir(parents=True, exist_ok=True)
    payload = [
        {
            "set_id": s.set_id,
            "fused_centroid": [round(float(v), 6) for v in s.fused_centroid],
            "members": {mod: lm.mask_id for mod, lm in sorted(s.members.items())},
        }
        for s in sets
    ]
    path = assoc_dir / f"{bundle_id}.json"
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_associations(assoc_dir: Path, bundle_id: str) -> list[dict]:
    path = Path(assoc_dir) / f"{bundle_id}.json"
    if not path.exists():
        return []
    return json.loads(path.read_text())
