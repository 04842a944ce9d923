"""Temporal clustering of per-bundle trunk observations into tree estimates,
and georeferencing of the results."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import VinefuseError
from .geometry import GeoOrigin, local_to_wgs84

DEFAULT_CLUSTER_RADIUS = 0.5  # m, horizontal
DEFAULT_MIN_OBS = 3


@dataclass(frozen=True)
class TrunkObservation:
    stamp: float
    position: np.ndarray  # (3,), odom frame
    span: int
    confidence: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise VinefuseError("observation position must be finite")
        if self.span not in (1, 2, 3):
            raise VinefuseError(f"span must be 1..3, got {self.span}")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class TreeEstimate:
    tree_id: str
    position: np.ndarray  # (3,), odom frame, mean of member observations
    n_obs: int
    first_stamp: float
    last_stamp: float
    wgs84: tuple[float, float] | None = None


class _Cluster:
    __slots__ = ("seed_xy", "total", "n", "first", "last")

    def __init__(self, obs: TrunkObservation):
        self.seed_xy = obs.position[:2].copy()
        self.total = obs.position.copy()
        self.n = 1
        self.first = obs.stamp
        self.last = obs.stamp

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.n

    def add(self, obs: TrunkObservation) -> None:
        self.total += obs.position
        self.n += 1
        self.last = obs.stamp


def accumulate(
    observations: Sequence[TrunkObservation],
    cluster_radius: float = DEFAULT_CLUSTER_RADIUS,
    min_obs: int = DEFAULT_MIN_OBS,
) -> list[TreeEstimate]:
    """Online nearest-cluster assignment over a stamp-ordered stream.

    An observation joins the nearest cluster (horizontal distance to its
    mean < cluster_radius) that is also within cluster_radius of the
    cluster's seed observation; the seed guard keeps any two members of one
    cluster within 2 x cluster_radius of each other even if the mean
    drifts. Otherwise it seeds a new cluster. Clusters reaching ``min_obs``
    are emitted in creation order.
    """
    clusters: list[_Cluster] = []
    for obs in observations:
        xy = obs.position[:2]
        candidates = sorted(
            range(len(clusters)),
            key=lambda k: float(np.linalg.norm(clusters[k].mean[:2] - xy)),
        )
        target = None
        for k in candidates:
            c = clusters[k]
            if float(np.linalg.norm(c.mean[:2] - xy)) >= cluster_radius:
                break  # sorted: nothing closer remains
            if float(np.linalg.norm(c.seed_xy - xy)) < cluster_radius:
                target = c
                break
        if target is None:
            clusters.append(_Cluster(obs))
        else:
            target.add(obs)

    estimates = []
    n_emitted = 0
    for c in clusters:
        if c.n < min_obs:
            continue
        estimates.append(
            TreeEstimate(
                tree_id=f"t{n_emitted:03d}",
                position=c.mean,
                n_obs=c.n,
                first_stamp=c.first,
                last_stamp=c.last,
            )
        )
        n_emitted += 1
    return estimates


def georeference(
    estimates: Sequence[TreeEstimate], origin: GeoOrigin
) -> list[TreeEstimate]:
    return [
        replace(e, wgs84=local_to_wgs84(e.position, origin)) for e in estimates
    ]


# --- tree estimate / ground truth files -------------------------------------------


def write_trees(path: Path, estimates: Sequence[TreeEstimate]) -> Path:
    payload = []
    for e in estimates:
        rec = {
            "tree_id": e.tree_id,
            "x": round(float(e.position[0]), 6),
            "y": round(float(e.position[1]), 6),
            "z": round(float(e.position[2]), 6),
            "n_obs": e.n_obs,
        }
        if e.wgs84 is not None:
            rec["lat"] = e.wgs84[0]
            rec["lon"] = e.wgs84[1]
        payload.append(rec)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
    return Path(path)


def read_trees(path: Path) -> list[TreeEstimate]:
    payload = json.loads(Path(path).read_text())
    out = []
    for rec in payload:
        wgs84 = None
        if "lat" in rec and "lon" in rec:
            wgs84 = (float(rec["lat"]), float(rec["lon"]))
        out.append(
            TreeEstimate(
                tree_id=str(rec["tree_id"]),
                position=np.array([rec["x"], rec["y"], rec["z"]], dtype=float),
                n_obs=int(rec.get("n_obs", 0)),
                first_stamp=0.0,
                last_stamp=0.0,
                wgs84=wgs84,
            )
        )
    return out
