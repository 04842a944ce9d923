"""Stage orchestration: wires the annotation, dataset, detection, and
localization modules over a run directory, through the external-tool
protocol, into the final evaluation report."""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence


from . import adapter, annotate, associate, dataset, evaluate, localize, runio, sync
from .adapter import DetectionRecord, ToolInvocation
from .annotate import Mask, MaskSet
from .config import PipelineConfig
from .errors import ConfigError
from .geometry import interpolate_cloud, project
from .runio import RunData
from .simulate import generate_scene, simulate_run
from .sync import FrameBundle

STAGE_SOURCE = {
    "S": "detector_stage_S",
    "S+": "detector_stage_Splus",
    "T": "detector_stage_T",
}


def mock_tool_cmd(oracle_dir: Path) -> list[str]:
    return [sys.executable, "-m", "vinefuse.mock_tool", "--source", str(oracle_dir)]


def load_bundles(run: RunData, cfg: PipelineConfig) -> list[FrameBundle]:
    return sync.bundle_streams(
        run.frames,
        run.clouds,
        run.poses,
        tolerance=cfg.thresholds.sync_tolerance,
        anchor=cfg.anchor_modality,
    )


def filter_masksets(masksets: Sequence[MaskSet], cfg: PipelineConfig) -> dict[tuple[str, str], MaskSet]:
    th = cfg.thresholds
    return {
        (ms.bundle_id, ms.modality): annotate.apply_filters(
            ms,
            epsilon_frac=th.epsilon_frac,
            min_aspect=th.min_aspect,
            min_vertices=th.min_vertices,
            occupancy_min=th.occupancy_min,
            occupancy_max=th.occupancy_max,
            iou_threshold=th.iou_dedup,
        )
        for ms in masksets
    }


def detections_to_masksets(
    records: Sequence[DetectionRecord], bundles: Sequence[FrameBundle]
) -> list[MaskSet]:
    """View detector output as mask sets so it can re-enter the annotation
    pipeline (the later-stage re-annotation path)."""
    dims = {
        (b.bundle_id, m): (f.width, f.height)
        for b in bundles
        for m, f in b.frames.items()
    }
    grouped: dict[tuple[str, str], list[Mask]] = {key: [] for key in dims}
    counters: dict[tuple[str, str], int] = {}
    for rec in records:
        key = (rec.bundle_id, rec.modality)
        if key not in grouped:
            continue
        k = counters.get(key, 0)
        counters[key] = k + 1
        grouped[key].append(
            Mask(
                mask_id=f"{rec.bundle_id}:{rec.modality}:det{k:03d}",
                bundle_id=rec.bundle_id,
                modality=rec.modality,
                polygon=rec.polygon,
                score=rec.confidence,
                source=STAGE_SOURCE[rec.stage],
            )
        )
    return [
        MaskSet(key[0], key[1], dims[key][0], dims[key][1], tuple(masks))
        for key, masks in sorted(grouped.items())
    ]


@dataclass
class BundleAssociations:
    bundle: FrameBundle
    sets: list[associate.AssociationSet] = field(default_factory=list)


def lift_and_associate(
    run: RunData,
    bundles: Sequence[FrameBundle],
    masksets: Mapping[tuple[str, str], MaskSet],
    cfg: PipelineConfig,
    assoc_dir: Path | None = None,
) -> list[BundleAssociations]:
    """Per bundle: motion-compensate the cloud to each frame stamp, project,
    lift every mask (2 sigma outlier gate), and associate across modalities.
    Inlier 3D points are taken from the cloud re-expressed at the bundle
    reference time so centroids are comparable across modalities."""
    th = cfg.thresholds
    out = []
    for bundle in bundles:
        record = BundleAssociations(bundle=bundle)
        cloud = bundle.cloud
        if cloud is not None and len(cloud) > 0:
            cloud_pose = run.poses.pose_at(cloud.stamp)
            pose_ref = run.poses.pose_at(bundle.reference_stamp)
            ref_cloud = interpolate_cloud(cloud, pose_ref, cloud_pose)
            lifted: dict[str, list[associate.LiftedMask]] = {}
            for modality, frame in sorted(bundle.frames.items()):
                ms = masksets.get((bundle.bundle_id, modality))
                if ms is None or not ms.masks:
                    continue
                frame_cloud = interpolate_cloud(cloud, frame.pose, cloud_pose)
                projection = project(frame_cloud, run.cameras[modality])
                for mask in ms.masks:
                    lm = associate.lift_mask(
                        mask,
                        projection,
                        ref_cloud.points,
                        min_points=th.min_points,
                        two_sigma=th.two_sigma,
                    )
                    if lm is not None:
                        lifted.setdefault(modality, []).append(lm)
            if lifted:
                record.sets = associate.associate_bundle(
                    lifted, threshold=th.association
                )
        if assoc_dir is not None:
            associate.write_associations(assoc_dir, bundle.bundle_id, record.sets)
        out.append(record)
    return out


def observations_from(
    run: RunData, associations: Sequence[BundleAssociations]
) -> list[localize.TrunkObservation]:
    observations = []
    for record in associations:
        if not record.sets:
            continue
        pose_ref = run.poses.pose_at(record.bundle.reference_stamp)
        for s in record.sets:
            observations.append(
                localize.TrunkObservation(
                    stamp=record.bundle.reference_stamp,
                    position=pose_ref.apply(s.fused_centroid),
                    span=s.span,
                    confidence=max(lm.mask.score for lm in s.members.values()),
                )
            )
    observations.sort(key=lambda o: o.stamp)
    return observations


def build_examples(
    bundles: Sequence[FrameBundle],
    associations: Sequence[BundleAssociations],
) -> list[dataset.LabeledExample]:
    """One example per frame; labels are the masks that survived lifting and
    association (the pseudo-label unit), pending curation. Frames without
    labels stay in as explicit negatives."""
    members: dict[tuple[str, str], list[associate.LiftedMask]] = {}
    for record in associations:
        for s in record.sets:
            for modality, lm in s.members.items():
                members.setdefault((record.bundle.bundle_id, modality), []).append(lm)
    examples = []
    for bundle in bundles:
        for modality, frame in sorted(bundle.frames.items()):
            labels = [
                dataset.Label(
                    polygon=lm.mask.polygon,
                    confidence=lm.mask.score,
                    provenance=lm.mask.source,
                    mask_id=lm.mask.mask_id,
                )
                for lm in sorted(
                    members.get((bundle.bundle_id, modality), []),
                    key=lambda lm: lm.mask_id,
                )
            ]
            examples.append(
                dataset.LabeledExample(
                    bundle_id=bundle.bundle_id,
                    modality=modality,
                    width=frame.width,
                    height=frame.height,
                    labels=labels,
                )
            )
    return examples


def run_annotator_stage(
    bundles: Sequence[FrameBundle],
    cfg: PipelineConfig,
    work_dir: Path,
    oracle_dir: Path | None,
) -> list[MaskSet]:
    cmd = cfg.annotator_cmd
    if cmd is None:
        if oracle_dir is None or not oracle_dir.exists():
            raise ConfigError(
                "no annotator_cmd configured and the run has no oracle directory"
            )
        cmd = mock_tool_cmd(oracle_dir.resolve())
    invocation = ToolInvocation(
        tool_cmd=tuple(cmd), work_dir=work_dir, timeout=cfg.tool_timeout, kind="annotator"
    )
    return adapter.run_annotator(bundles, invocation)


def run_detector_stage(
    bundles: Sequence[FrameBundle],
    cfg: PipelineConfig,
    work_dir: Path,
    oracle_dir: Path | None,
    stage: str,
) -> list[DetectionRecord]:
    cmd = cfg.detector_cmd
    if cmd is None:
        if oracle_dir is None or not oracle_dir.exists():
            raise ConfigError(
                "no detector_cmd configured and the run has no oracle directory"
            )
        cmd = mock_tool_cmd(oracle_dir.resolve())
    invocation = ToolInvocation(
        tool_cmd=tuple(cmd),
        work_dir=work_dir,
        timeout=cfg.tool_timeout,
        kind="detector",
        stage=stage,
        extra_config=cfg.detector_training,
    )
    return adapter.run_detector(bundles, invocation)


@dataclass
class PipelineResult:
    run_dir: Path
    eval_path: Path
    trees_path: Path
    localization: evaluate.LocalizationEvalReport
    detection: evaluate.DetectionEvalReport | None
    stage_dirs: dict[str, Path]
    elapsed_s: float


def serve_curation(cfg: PipelineConfig, run_path: Path, assoc_dir: Path):
    """Default interactive curation gate: serve the review API (and UI when
    built) until a client posts /api/complete."""

    def curate(store):
        from . import service

        print(
            f"curation server on http://127.0.0.1:{cfg.serve_port} "
            "(POST /api/complete to continue)",
            flush=True,
        )
        service.serve(
            store,
            run_dir=run_path,
            assoc_dir=assoc_dir,
            port=cfg.serve_port,
            wait_complete=True,
            sync_tolerance=cfg.thresholds.sync_tolerance,
        )

    return curate


def run_pipeline(
    cfg: PipelineConfig,
    out_dir: Path | str,
    auto_approve: bool = False,
    curate=None,
) -> PipelineResult:
    """Full staged flow: simulate (unless a recording is given), annotate via
    the tool protocol, filter, lift + associate, split, curate, merge through
    detector stages S -> S+ -> T, localize from the refined detections, and
    evaluate against the surveyed ground truth.

    Without ``auto_approve`` the stage-S store is handed to ``curate``
    (default: serve the curation API until /api/complete) before merging.
    """
    started = time.monotonic()
    out_dir = Path(out_dir).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.run_dir is not None:
        run_path = Path(cfg.run_dir).resolve()
        if not run_path.exists():
            raise ConfigError(f"run directory not found: {run_path}")
    else:
        run_path = out_dir / "run"
        scene = generate_scene(cfg.scene)
        simulate_run(scene, cfg.run, sensors=None, out_dir=run_path)

    run = runio.load_run(run_path)
    bundles = load_bundles(run, cfg)
    oracle_dir = run_path / "oracle"

    # annotation pipeline
    raw = run_annotator_stage(bundles, cfg, out_dir / "tool_annotate", oracle_dir)
    filtered = filter_masksets(raw, cfg)
    masks_dir = out_dir / "masks"
    for ms in filtered.values():
        if ms.masks:
            annotate.write_maskset(masks_dir, ms)
    associations = lift_and_associate(
        run, bundles, filtered, cfg, assoc_dir=out_dir / "associations"
    )

    # staged dataset
    examples = build_examples(bundles, associations)
    manifest = dataset.split(examples, ratios=cfg.split_ratios, seed=cfg.seed)
    stage_dirs = {"S": out_dir / "dataset" / "stage_S"}
    store = dataset.DatasetStore(stage_dirs["S"], manifest)
    if auto_approve:
        store.approve_all_pending()
    else:
        if curate is None:
            curate = serve_curation(cfg, run_path, out_dir / "associations")
        curate(store)

    detections_s = run_detector_stage(
        bundles, cfg, out_dir / "tool_detect_S", oracle_dir, stage="S"
    )
    adapter.write_detections(out_dir / "detections_S.json", detections_s)
    manifest_splus, _ = dataset.merge_pseudo_labels(
        store.manifest,
        detections_s,
        conf_threshold=cfg.thresholds.conf_threshold,
        iou_threshold=cfg.thresholds.merge_iou,
    )
    stage_dirs["S+"] = out_dir / "dataset" / "stage_Splus"
    dataset.DatasetStore(stage_dirs["S+"], manifest_splus)

    detections_splus = run_detector_stage(
        bundles, cfg, out_dir / "tool_detect_Splus", oracle_dir, stage="S+"
    )
    adapter.write_detections(out_dir / "detections_Splus.json", detections_splus)
    manifest_t, _ = dataset.merge_pseudo_labels(
        manifest_splus,
        detections_splus,
        conf_threshold=cfg.thresholds.conf_threshold,
        iou_threshold=cfg.thresholds.merge_iou,
    )
    stage_dirs["T"] = out_dir / "dataset" / "stage_T"
    dataset.DatasetStore(stage_dirs["T"], manifest_t)
    dataset.export(manifest_t, out_dir / "export_T")

    # localization from the refined detector's output
    det_masksets = filter_masksets(
        detections_to_masksets(detections_splus, bundles), cfg
    )
    det_associations = lift_and_associate(run, bundles, det_masksets, cfg)
    observations = observations_from(run, det_associations)
    estimates = localize.accumulate(
        observations,
        cluster_radius=cfg.thresholds.cluster_radius,
        min_obs=cfg.thresholds.min_obs,
    )
    estimates = localize.georeference(estimates, run.origin)
    trees_path = localize.write_trees(out_dir / "trees.json", estimates)

    ground_truth = evaluate.read_ground_truth(run_path / "ground_truth.json")
    loc_report = evaluate.localization_metrics(
        estimates,
        ground_truth,
        match_threshold=cfg.thresholds.match_threshold,
        radius=cfg.thresholds.radius,
    )

    det_report = None
    test_gt = [
        {
            "bundle_id": ex.bundle_id,
            "modality": ex.modality,
            "labels": [lb.polygon for lb in ex.labels if lb.curation == "approved"],
        }
        for ex in sorted(manifest_t.examples.values(), key=lambda e: e.key)
        if ex.split == "test"
    ]
    test_keys = {(g["bundle_id"], g["modality"]) for g in test_gt}
    test_preds = [
        d for d in detections_splus if (d.bundle_id, d.modality) in test_keys
    ]
    if any(g["labels"] for g in test_gt):
        det_report = evaluate.detection_metrics(
            test_preds, test_gt, conf_cutoff=cfg.thresholds.conf_cutoff
        )

    eval_path = evaluate.write_eval_report(
        out_dir / "eval.json",
        localization=loc_report,
        detection=det_report,
        config_echo=cfg.to_json(),
    )
    return PipelineResult(
        run_dir=run_path,
        eval_path=eval_path,
        trees_path=trees_path,
        localization=loc_report,
        detection=det_report,
        stage_dirs=stage_dirs,
        elapsed_s=time.monotonic() - started,
    )
