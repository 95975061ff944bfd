"""Matching, metric aggregation, and test-set evaluation with a scripted
detector standing in for the model."""
import numpy as np
import pytest

from textdet import evaluator
from textdet.alignment import AlignedDetection
from textdet.evaluator import (
    MatchResult,
    alignment_accuracy,
    detection_metrics,
    evaluate_testset,
    iou_histogram,
    match_detections,
    write_histogram_csv,
)
from textdet.shapegen import DatasetManifest, GenConfig, generate_dataset, load_example


def box(x1, y1, x2, y2):
    return np.array([x1, y1, x2, y2], dtype=np.float64)


# -- greedy matching ---------------------------------------------------------

def test_perfect_predictions_match_one_to_one():
    gt = np.stack([box(0, 0, 10, 10), box(20, 20, 30, 30)])
    res = match_detections(gt, np.array([0.9, 0.8]), gt)
    assert (res.tp, res.fp, res.fn) == (2, 0, 0)
    assert res.matched_ious == [1.0, 1.0]
    assert res.precision == 1.0 and res.recall == 1.0


def test_low_iou_prediction_counts_as_false_positive():
    gt = np.stack([box(0, 0, 10, 10)])
    pred = np.stack([box(40, 40, 50, 50)])
    res = match_detections(pred, np.array([0.9]), gt)
    assert (res.tp, res.fp, res.fn) == (0, 1, 1)


def test_each_object_is_claimed_at_most_once():
    gt = np.stack([box(0, 0, 10, 10)])
    pred = np.stack([box(0, 0, 10, 10), box(1, 1, 10, 10)])
    res = match_detections(pred, np.array([0.7, 0.9]), gt)
    # the higher-scored (second) prediction claims the object
    assert (res.tp, res.fp, res.fn) == (1, 1, 0)
    assert res.matched_ious == [pytest.approx(81.0 / 100.0)]


def test_score_order_decides_contested_matches():
    gt = np.stack([box(0, 0, 10, 10)])
    pred = np.stack([box(0, 0, 10, 10), box(0, 0, 9, 10)])
    res = match_detections(pred, np.array([0.5, 0.9]), gt)
    # the weaker-IoU but higher-scored box wins the only object
    assert res.matched_ious == [pytest.approx(0.9)]
    assert (res.tp, res.fp) == (1, 1)


def test_equal_scores_break_ties_by_input_order():
    gt = np.stack([box(0, 0, 10, 10)])
    pred = np.stack([box(0, 0, 9, 10), box(0, 0, 10, 10)])
    res = match_detections(pred, np.array([0.5, 0.5]), gt)
    assert res.matched_ious == [pytest.approx(0.9)]


def test_degenerate_counts_follow_the_conventions():
    gt = np.stack([box(0, 0, 10, 10)])
    none = match_detections(np.zeros((0, 4)), np.zeros(0), gt)
    assert (none.tp, none.fp, none.fn) == (0, 0, 1)
    assert none.precision == 0.0 and none.recall == 0.0

    spurious = match_detections(gt, np.array([0.9]), np.zeros((0, 4)))
    assert (spurious.tp, spurious.fp, spurious.fn) == (0, 1, 0)
    assert spurious.precision == 0.0 and spurious.recall == 1.0

    silent = match_detections(np.zeros((0, 4)), np.zeros(0), np.zeros((0, 4)))
    assert silent.precision == 1.0 and silent.recall == 1.0


# -- aggregation -------------------------------------------------------------

def test_metrics_average_per_image_and_pool_ious():
    a = MatchResult(tp=1, fp=1, fn=0, matched_ious=[0.8])
    b = MatchResult(tp=2, fp=0, fn=2, matched_ious=[0.6, 1.0])
    precision, recall, mean_iou = detection_metrics([a, b])
    assert precision == pytest.approx((0.5 + 1.0) / 2)
    assert recall == pytest.approx((1.0 + 0.5) / 2)
    assert mean_iou == pytest.approx((0.8 + 0.6 + 1.0) / 3)


def test_metrics_with_no_matches_report_zero_iou():
    res = MatchResult(tp=0, fp=3, fn=1)
    assert detection_metrics([res])[2] == 0.0
    with pytest.raises(ValueError):
        detection_metrics([])


def test_alignment_accuracy_uses_a_strict_threshold():
    assert alignment_accuracy([0.9, 0.1], [True, False]) == 1.0
    assert alignment_accuracy([0.5, 0.5], [True, False]) == 0.5  # 0.5 is "no"
    assert alignment_accuracy([0.4, 0.6, 0.6, 0.4], [1, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        alignment_accuracy([], [])
    with pytest.raises(ValueError):
        alignment_accuracy([0.5], [True, False])


# -- histograms --------------------------------------------------------------

def test_histogram_covers_the_unit_interval_in_20_bins():
    hist = iou_histogram([0.0, 0.05, 0.51, 0.99, 1.0])
    assert len(hist["counts"]) == 20
    assert len(hist["bin_edges"]) == 21
    assert hist["bin_edges"][0] == 0.0 and hist["bin_edges"][-1] == 1.0
    assert sum(hist["counts"]) == 5
    assert hist["counts"][0] == 1   # 0.0
    assert hist["counts"][1] == 1   # 0.05 sits on the edge, right-open bins
    assert hist["counts"][10] == 1  # 0.51
    assert hist["counts"][19] == 2  # 0.99 and the closed right edge at 1.0


def test_histogram_csv_layout(tmp_path):
    hist = iou_histogram([0.5] * 3)
    path = tmp_path / "hist.csv"
    write_histogram_csv(hist, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bin_low,bin_high,count"
    assert len(lines) == 21
    lo, hi, count = lines[11].split(",")
    assert (float(lo), float(hi), int(count)) == (0.5, 0.55, 3)


# -- evaluate_testset with a scripted detector --------------------------------

TINY_GEN = GenConfig(image_size=32, side_range=(8, 12), min_objects=2, max_objects=4)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    return generate_dataset(5, (2, 1, 4), TINY_GEN, tmp_path_factory.mktemp("eval") / "data")


def scripted_detect(manifest, alignment_for):
    """Replays ground truth as detections, with a chosen alignment score per
    object flag; consumes test records in evaluation order."""
    queue = [load_example(manifest, r) for r in manifest.split("test")]
    it = iter(queue)

    def fake(model, image, text):
        ex = next(it)
        dets = []
        for obj, flag in zip(ex.objects, ex.aligned):
            align = alignment_for(flag)
            dets.append(AlignedDetection(box=obj.box.copy(), confidence=0.9,
                                         alignment=align, score=0.9 * align))
        return dets

    return fake


def test_ideal_detector_scores_perfectly(tiny_data, monkeypatch):
    monkeypatch.setattr(evaluator, "detect",
                        scripted_detect(tiny_data, lambda flag: 1.0 if flag else 0.0))
    rep_all, rep_aligned = evaluate_testset(evaluator, tiny_data)
    assert rep_all.mean_precision == 1.0
    assert rep_all.mean_recall == 1.0
    assert rep_all.mean_iou == 1.0
    assert rep_all.alignment_accuracy == 1.0
    assert rep_aligned.mean_precision == 1.0
    assert rep_aligned.mean_recall == 1.0
    assert rep_aligned.alignment_accuracy is None
    total_objects = sum(len(load_example(tiny_data, r).objects)
                        for r in tiny_data.split("test"))
    assert sum(rep_all.histogram["counts"]) == total_objects
    assert rep_all.histogram["counts"][-1] == total_objects


def test_inverted_alignment_fails_only_the_aligned_group(tiny_data, monkeypatch):
    monkeypatch.setattr(evaluator, "detect",
                        scripted_detect(tiny_data, lambda flag: 0.0 if flag else 1.0))
    rep_all, rep_aligned = evaluate_testset(evaluator, tiny_data)
    # localization is still perfect; only the semantic grouping is wrong
    assert rep_all.mean_precision == 1.0 and rep_all.mean_recall == 1.0
    assert rep_all.alignment_accuracy == 0.0
    assert rep_aligned.mean_precision == 0.0
    assert rep_aligned.mean_recall == 0.0


def test_evaluate_requires_a_test_split(tmp_path):
    with pytest.raises(ValueError):
        evaluate_testset(evaluator, DatasetManifest(root=tmp_path))
