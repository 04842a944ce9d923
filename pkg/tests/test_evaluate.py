
import numpy as np
import pytest

from vinefuse import evaluate
from vinefuse.adapter import DetectionRecord
from vinefuse.errors import InputError
from vinefuse.evaluate import GroundTruthTree
from vinefuse.localize import TreeEstimate

import oracles


def rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def pred(polygon, conf, bundle="b01", modality="visual"):
    return DetectionRecord(bundle, modality, polygon, conf, "S")


def gt_frame(labels, bundle="b01", modality="visual"):
    return {"bundle_id": bundle, "modality": modality, "labels": list(labels)}


# --- detection metrics ------------------------------------------------------------


def test_perfect_single_prediction():
    gt = [gt_frame([rect(0, 0, 10, 20)])]
    preds = [pred(rect(0, 0, 10, 20), 0.9)]
    report = evaluate.detection_metrics(preds, gt)
    assert report.precision == 1.0
    assert report.recall == 1.0
    assert report.map50 == pytest.approx(1.0)
    assert report.map50_95 == pytest.approx(1.0)
    assert report.map50 >= report.map50_95


def test_zero_iou_prediction_scores_zero():
    gt = [gt_frame([rect(0, 0, 10, 20)])]
    preds = [pred(rect(50, 50, 60, 70), 0.9)]
    report = evaluate.detection_metrics(preds, gt)
    assert report.precision == 0.0
    assert report.recall == 0.0
    assert report.map50 == 0.0
    assert report.map50_95 == 0.0


def test_three_predictions_two_gt_matches_oracle():
    # GT A and B; p1 IoU .9 on A (conf .9), p2 IoU .3 on B (conf .8),
    # p3 IoU .6 on B (conf .7); all pixel-exact rectangles
    gt = [gt_frame([rect(0, 0, 10, 10), rect(20, 0, 30, 10)])]
    preds = [
        pred(rect(0, 0, 10, 9), 0.9),
        pred(rect(20, 0, 30, 3), 0.8),
        pred(rect(20, 0, 30, 6), 0.7),
    ]
    report = evaluate.detection_metrics(preds, gt)
    # brute-force oracle over the hand-derived match flags at IoU 0.5
    flags = [(0.9, True, 0), (0.8, False, 1), (0.7, True, 2)]
    expected = oracles.brute_force_ap(flags, total_gt=2)
    assert report.map50 == pytest.approx(expected, abs=1e-6)
    assert report.map50 == pytest.approx((51 * 1.0 + 50 * (2 / 3)) / 101, abs=1e-9)


def test_duplicate_gt_frames_rejected():
    gt = [gt_frame([rect(0, 0, 10, 10)]), gt_frame([rect(0, 0, 10, 10)])]
    with pytest.raises(InputError):
        evaluate.detection_metrics([], gt)


def test_empty_gt_rejected():
    with pytest.raises(InputError):
        evaluate.detection_metrics([], [gt_frame([])])


def test_conf_cutoff_applies_to_scalar_metrics():
    gt = [gt_frame([rect(0, 0, 10, 20)])]
    preds = [pred(rect(0, 0, 10, 20), 0.2)]  # below the 0.25 cutoff
    report = evaluate.detection_metrics(preds, gt)
    assert report.precision == 0.0
    assert report.recall == 0.0
    assert report.map50 == pytest.approx(1.0)  # AP ignores the cutoff


def _random_instance(rng):
    """Random small instance with integer-aligned rectangles so the oracle
    can compute raster IoU by pixel counting."""
    n_gt = int(rng.integers(1, 6))
    n_pred = int(rng.integers(1, 11))
    frames = [f"b{k}" for k in range(int(rng.integers(1, 3)))]
    gt = []
    gt_rects = {}
    for fk, frame_id in enumerate(frames):
        labels = []
        rects = []
        for g in range(n_gt):
            x0 = int(rng.integers(0, 60))
            y0 = int(rng.integers(0, 60))
            w = int(rng.integers(4, 20))
            h = int(rng.integers(4, 20))
            labels.append(rect(x0, y0, x0 + w, y0 + h))
            rects.append((x0, y0, x0 + w, y0 + h))
        gt.append(gt_frame(labels, bundle=frame_id))
        gt_rects[frame_id] = rects
    preds = []
    pred_rects = []
    for p in range(n_pred):
        frame_id = frames[int(rng.integers(0, len(frames)))]
        x0 = int(rng.integers(0, 60))
        y0 = int(rng.integers(0, 60))
        w = int(rng.integers(4, 20))
        h = int(rng.integers(4, 20))
        conf = float(np.round(rng.uniform(0.05, 1.0), 3))
        preds.append(pred(rect(x0, y0, x0 + w, y0 + h), conf, bundle=frame_id))
        pred_rects.append((frame_id, (x0, y0, x0 + w, y0 + h)))
    return gt, gt_rects, preds, pred_rects


def _oracle_ap(gt_rects, preds, pred_rects, threshold):
    """Fully independent AP: pixel-count IoU, explicit greedy match, literal
    101-point interpolation."""
    order = sorted(
        range(len(preds)),
        key=lambda k: (-preds[k].confidence, preds[k].bundle_id, preds[k].modality, k),
    )
    used = {f: set() for f in gt_rects}
    flags = []
    for k in order:
        frame_id, prect = pred_rects[k]
        best = (-1, 0.0)
        for gk, grect in enumerate(gt_rects[frame_id]):
            if gk in used[frame_id]:
                continue
            iou = oracles.rect_iou_pixelcount(prect, grect)
            if iou > best[1]:
                best = (gk, iou)
        matched = best[0] >= 0 and best[1] >= threshold
        if matched:
            used[frame_id].add(best[0])
        flags.append((preds[k].confidence, matched, k))
    total_gt = sum(len(v) for v in gt_rects.values())
    # flags are already confidence-ordered; oracle re-sorts identically
    return oracles.brute_force_ap(flags, total_gt)


def test_ap_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(200):
        gt, gt_rects, preds, pred_rects = _random_instance(rng)
        report = evaluate.detection_metrics(preds, gt)
        for threshold in (0.5, 0.75):
            expected = _oracle_ap(gt_rects, preds, pred_rects, threshold)
            assert report.ap_by_threshold[threshold] == pytest.approx(
                expected, abs=1e-6
            )
        expected_mean = sum(
            _oracle_ap(gt_rects, preds, pred_rects, t) for t in evaluate.IOU_THRESHOLDS
        ) / len(evaluate.IOU_THRESHOLDS)
        assert report.map50_95 == pytest.approx(expected_mean, abs=1e-6)


def test_ap_monotone_when_raising_tp_confidence():
    # preds each overlap exactly one GT, so greedy matching is stable
    rng = np.random.default_rng(99)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        gt_labels = []
        preds = []
        for k in range(n):
            x0 = 40 * k
            gt_labels.append(rect(x0, 0, x0 + 10, 20))
            if rng.random() < 0.7:
                dy = int(rng.integers(0, 12))
                preds.append(
                    pred(rect(x0, dy, x0 + 10, dy + 20), float(rng.uniform(0.3, 0.9)))
                )
        if not preds:
            continue
        gt = [gt_frame(gt_labels)]
        base = evaluate.detection_metrics(preds, gt).map50
        flags = evaluate._match_flags(
            preds, evaluate._normalize_ground_truth(gt), 0.5,
            evaluate._iou_table(preds, evaluate._normalize_ground_truth(gt)),
        )
        tp_idx = [tie[2] for _c, m, tie in flags if m]
        if not tp_idx:
            continue
        k = tp_idx[0]
        raised = [
            pred(p.polygon, min(1.0, p.confidence + 0.3), bundle=p.bundle_id)
            if i == k
            else p
            for i, p in enumerate(preds)
        ]
        boosted = evaluate.detection_metrics(raised, gt).map50
        assert boosted >= base - 1e-12


# --- localization metrics ------------------------------------------------------------


def estimate(x, y, z, tree_id):
    return TreeEstimate(
        tree_id=tree_id, position=np.array([x, y, z]), n_obs=5, first_stamp=0.0, last_stamp=1.0
    )


def gt_tree(x, y, z, tree_id):
    return GroundTruthTree(tree_id, [x, y, z])


def test_perfect_localization():
    gts = [gt_tree(2.0 * k, 0.0, 0.4, f"g{k}") for k in range(5)]
    ests = [estimate(2.0 * k, 0.0, 0.4, f"t{k}") for k in range(5)]
    report = evaluate.localization_metrics(ests, gts)
    assert report.l2_mean == 0.0
    assert report.mae_r == 0.0
    assert report.rmse_r == 0.0
    assert report.recall_r == 1.0
    assert report.detected == report.total == 5


def test_single_pair_at_30cm():
    # in radius stats but not detected at the 0.15 m threshold
    report = evaluate.localization_metrics(
        [estimate(0.30, 0.0, 0.0, "t0")], [gt_tree(0.0, 0.0, 0.0, "g0")]
    )
    assert report.l2_mean == pytest.approx(0.30)
    assert report.mae_r == pytest.approx(0.30)
    assert report.rmse_r == pytest.approx(0.30)
    assert report.recall_r == 1.0
    assert report.detected == 0
    assert report.total == 1


def test_eight_of_ten_detected():
    gts = [gt_tree(2.0 * k, 0.0, 0.4, f"g{k}") for k in range(10)]
    ests = [estimate(2.0 * k + 0.1, 0.0, 0.4, f"t{k}") for k in range(8)]
    report = evaluate.localization_metrics(ests, gts)
    assert report.detected == 8
    assert report.total == 10
    assert report.recall_r == pytest.approx(0.8)
    assert report.l2_mean == pytest.approx(0.1)


def test_rmse_at_least_mae():
    rng = np.random.default_rng(77)
    for _ in range(30):
        n = int(rng.integers(2, 8))
        gts = [gt_tree(3.0 * k, 0.0, 0.4, f"g{k}") for k in range(n)]
        ests = [
            estimate(3.0 * k + rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2), 0.4, f"t{k}")
            for k in range(n)
        ]
        report = evaluate.localization_metrics(ests, gts)
        if report.mae_r is not None:
            assert report.rmse_r >= report.mae_r - 1e-12


def test_assignment_order_invariant():
    gts = [gt_tree(0.0, 0.0, 0.0, "g0"), gt_tree(1.0, 0.0, 0.0, "g1")]
    ests = [estimate(0.05, 0.0, 0.0, "t0"), estimate(0.95, 0.0, 0.0, "t1")]
    a = evaluate.localization_metrics(ests, gts)
    b = evaluate.localization_metrics(list(reversed(ests)), list(reversed(gts)))
    assert a == b


def test_extra_estimates_do_not_steal_matches():
    gts = [gt_tree(0.0, 0.0, 0.0, "g0")]
    ests = [estimate(0.05, 0.0, 0.0, "tgood"), estimate(0.45, 0.0, 0.0, "tbad")]
    report = evaluate.localization_metrics(ests, gts)
    assert report.detected == 1
    assert report.l2_mean == pytest.approx(0.05)


def test_empty_ground_truth_rejected():
    with pytest.raises(InputError):
        evaluate.localization_metrics([], [])


def test_no_estimates_gives_zero_recall():
    report = evaluate.localization_metrics([], [gt_tree(0, 0, 0, "g0")])
    assert report.recall_r == 0.0
    assert report.detected == 0
    assert report.l2_mean is None


def test_eval_report_file(tmp_path):
    report = evaluate.localization_metrics(
        [estimate(0.1, 0.0, 0.0, "t0")], [gt_tree(0.0, 0.0, 0.0, "g0")]
    )
    path = evaluate.write_eval_report(
        tmp_path / "eval.json", localization=report, config_echo={"seed": 7}
    )
    import json

    payload = json.loads(path.read_text())
    assert payload["localization"]["detected"] == 1
    assert payload["config"]["seed"] == 7
    assert payload["detection"] is None
