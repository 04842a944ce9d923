"""Command-line entry points.

Exit codes: 0 success, 2 validation/config error, 3 external tool failure,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import adapter, annotate, associate, dataset, evaluate, localize, pipeline, runio
from .config import PipelineConfig
from .errors import ConfigError, ToolFailure, VinefuseError
from .simulate import generate_scene, simulate_run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TOOL = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
    else:
        cfg = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.scene = type(cfg.scene)(**{**cfg.scene.__dict__, "seed": args.seed})
    return cfg


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    scene = generate_scene(cfg.scene)
    out = simulate_run(scene, cfg.run, sensors=None, out_dir=args.out)
    print(out)
    return EXIT_OK


def cmd_annotate(args) -> int:
    cfg = _load_config(args)
    run = runio.load_run(_require(args.run, "run directory"))
    bundles = pipeline.load_bundles(run, cfg)
    cmd = args.tool.split() if args.tool else None
    if cmd is not None:
        cfg.annotator_cmd = cmd
    raw = pipeline.run_annotator_stage(
        bundles, cfg, Path(args.out) / "_tool", Path(args.run) / "oracle"
    )
    filtered = pipeline.filter_masksets(raw, cfg)
    n = 0
    for ms in filtered.values():
        if ms.masks:
            annotate.write_maskset(args.out, ms)
            n += len(ms.masks)
    print(f"{args.out} ({n} masks)")
    return EXIT_OK


def _read_masksets(run, bundles, masks_dir):
    out = {}
    for bundle in bundles:
        for modality, frame in bundle.frames.items():
            ms = annotate.read_maskset(
                masks_dir, bundle.bundle_id, modality, frame.width, frame.height
            )
            out[(bundle.bundle_id, modality)] = ms
    return out


def cmd_associate(args) -> int:
    cfg = _load_config(args)
    run = runio.load_run(_require(args.run, "run directory"))
    bundles = pipeline.load_bundles(run, cfg)
    masksets = _read_masksets(run, bundles, _require(args.masks, "masks directory"))
    records = pipeline.lift_and_associate(
        run, bundles, masksets, cfg, assoc_dir=Path(args.out)
    )
    n = sum(len(r.sets) for r in records)
    print(f"{args.out} ({n} association sets)")
    return EXIT_OK


def cmd_dataset_split(args) -> int:
    cfg = _load_config(args)
    run = runio.load_run(_require(args.run, "run directory"))
    bundles = pipeline.load_bundles(run, cfg)
    masksets = _read_masksets(run, bundles, _require(args.masks, "masks directory"))
    assoc_dir = _require(args.assoc, "associations directory")
    examples = []
    for bundle in bundles:
        member_ids: dict[str, set[str]] = {}
        for rec in associate.read_associations(assoc_dir, bundle.bundle_id):
            for modality, mask_id in rec["members"].items():
                member_ids.setdefault(modality, set()).add(mask_id)
        for modality, frame in sorted(bundle.frames.items()):
            ms = masksets[(bundle.bundle_id, modality)]
            labels = [
                dataset.Label(
                    polygon=m.polygon,
                    confidence=m.score,
                    provenance=m.source,
                    mask_id=m.mask_id,
                )
                for m in ms.masks
                if m.mask_id in member_ids.get(modality, set())
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
    manifest = dataset.split(examples, ratios=cfg.split_ratios, seed=cfg.seed)
    dataset.DatasetStore(args.out, manifest)
    print(f"{args.out} (digest {manifest.digest()[:12]})")
    return EXIT_OK


def cmd_dataset_merge(args) -> int:
    cfg = _load_config(args)
    store = dataset.DatasetStore(_require(args.store, "dataset store"))
    detections = adapter.read_detections(_require(args.detections, "detections file"))
    merged, skips = dataset.merge_pseudo_labels(
        store.manifest,
        detections,
        conf_threshold=cfg.thresholds.conf_threshold,
        iou_threshold=cfg.thresholds.merge_iou,
    )
    dataset.DatasetStore(args.out, merged)
    print(f"{args.out} (stage {merged.stage}, {len(skips)} skips)")
    return EXIT_OK


def cmd_dataset_export(args) -> int:
    store = dataset.DatasetStore(_require(args.store, "dataset store"))
    out = dataset.export(store.manifest, args.out)
    print(out)
    return EXIT_OK


def cmd_dataset_verdict(args) -> int:
    store = dataset.DatasetStore(_require(args.store, "dataset store"))
    entry = store.record_verdict(args.bundle, args.modality, args.index, args.verdict)
    print(json.dumps(entry))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    run = runio.load_run(_require(args.run, "run directory"))
    bundles = pipeline.load_bundles(run, cfg)
    if args.tool:
        cfg.detector_cmd = args.tool.split()
    records = pipeline.run_detector_stage(
        bundles,
        cfg,
        Path(args.out).parent / "_tool_detect",
        Path(args.run) / "oracle",
        stage=args.stage,
    )
    adapter.write_detections(args.out, records)
    print(f"{args.out} ({len(records)} detections)")
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = _load_config(args)
    run = runio.load_run(_require(args.run, "run directory"))
    bundles = pipeline.load_bundles(run, cfg)
    masksets = _read_masksets(run, bundles, _require(args.masks, "masks directory"))
    records = pipeline.lift_and_associate(run, bundles, masksets, cfg)
    observations = pipeline.observations_from(run, records)
    estimates = localize.accumulate(
        observations,
        cluster_radius=cfg.thresholds.cluster_radius,
        min_obs=cfg.thresholds.min_obs,
    )
    estimates = localize.georeference(estimates, run.origin)
    localize.write_trees(args.out, estimates)
    print(f"{args.out} ({len(estimates)} trees)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    gt_path = _require(args.ground_truth, "ground truth file")
    estimates = localize.read_trees(_require(args.trees, "trees file"))
    ground_truth = evaluate.read_ground_truth(gt_path)
    report = evaluate.localization_metrics(
        estimates,
        ground_truth,
        match_threshold=cfg.thresholds.match_threshold,
        radius=cfg.thresholds.radius,
    )
    det_report = None
    if args.detections and args.labels:
        records = adapter.read_detections(_require(args.detections, "detections file"))
        store = dataset.DatasetStore(_require(args.labels, "dataset store"))
        frames = [
            {
                "bundle_id": ex.bundle_id,
                "modality": ex.modality,
                "labels": [lb.polygon for lb in ex.labels if lb.curation == "approved"],
            }
            for ex in sorted(store.manifest.examples.values(), key=lambda e: e.key)
            if ex.split == args.split
        ]
        keys = {(f["bundle_id"], f["modality"]) for f in frames}
        preds = [d for d in records if (d.bundle_id, d.modality) in keys]
        det_report = evaluate.detection_metrics(
            preds, frames, conf_cutoff=cfg.thresholds.conf_cutoff
        )
    evaluate.write_eval_report(
        args.out, localization=report, detection=det_report, config_echo=cfg.to_json()
    )
    print(args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.load(_require(args.config, "config file"))
    result = pipeline.run_pipeline(cfg, args.out, auto_approve=args.auto_approve)
    print(result.eval_path)
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import service

    store = dataset.DatasetStore(_require(args.store, "dataset store"))
    service.serve(
        store,
        run_dir=Path(args.run) if args.run else None,
        assoc_dir=Path(args.assoc) if args.assoc else None,
        port=args.port,
        host=args.host,
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="vinefuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=False):
        if config:
            p.add_argument("--config", help="pipeline config JSON")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simulate", help="generate a synthetic run directory")
    common(p, seed=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("annotate", help="run the annotator tool and filter masks")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tool", help="annotator command (defaults to the oracle mock)")
    p.set_defaults(fn=cmd_annotate)

    p = sub.add_parser("associate", help="lift masks to 3D and associate across modalities")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_associate)

    p = sub.add_parser("dataset", help="staged pseudo-label store operations")
    dsub = p.add_subparsers(dest="dataset_command", required=True)

    q = dsub.add_parser("split", help="build the stage-S store from associations")
    common(q, seed=True)
    q.add_argument("--run", required=True)
    q.add_argument("--masks", required=True)
    q.add_argument("--assoc", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_dataset_split)

    q = dsub.add_parser("merge", help="merge high-confidence detections, advancing a stage")
    common(q)
    q.add_argument("--store", required=True)
    q.add_argument("--detections", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_dataset_merge)

    q = dsub.add_parser("export", help="export approved labels for training")
    q.add_argument("--store", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_dataset_export)

    q = dsub.add_parser("verdict", help="record a curation verdict")
    q.add_argument("--store", required=True)
    q.add_argument("--bundle", required=True)
    q.add_argument("--modality", required=True)
    q.add_argument("--index", type=int, required=True)
    q.add_argument("--verdict", choices=["approved", "rejected"], required=True)
    q.set_defaults(fn=cmd_dataset_verdict)

    p = sub.add_parser("detect", help="run the detector tool over a recording")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=list(dataset.STAGES), default="S")
    p.add_argument("--tool", help="detector command (defaults to the oracle mock)")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("localize", help="cluster trunk observations into tree estimates")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_localize)

    p = sub.add_parser("evaluate", help="localization metrics against surveyed ground truth")
    common(p)
    p.add_argument("--trees", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--detections", help="detections file for detection metrics")
    p.add_argument("--labels", help="dataset store supplying ground-truth labels")
    p.add_argument("--split", default="test", choices=["train", "eval", "test"])
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("pipeline", help="full staged flow, headless with --auto-approve")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--auto-approve", action="store_true")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("serve", help="HTTP curation API (and review UI when built)")
    p.add_argument("--store", required=True)
    p.add_argument("--run")
    p.add_argument("--assoc")
    p.add_argument("--port", type=int, default=8714)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ToolFailure as exc:
        print(f"vinefuse: tool error: {exc}", file=sys.stderr)
        stderr = getattr(exc, "stderr", "")
        if stderr:
            print(stderr.rstrip(), file=sys.stderr)
        return EXIT_TOOL
    except VinefuseError as exc:
        print(f"vinefuse: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
