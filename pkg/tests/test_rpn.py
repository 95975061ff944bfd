"""RPN head, anchor labeling rules, minibatch sampling, loss, proposals."""
import numpy as np
import pytest

from helpers import max_rel_err, to_float64
from textdet import tensor as T
from textdet.backbone import FeatureMap
from textdet.geometry import (box_cxcywh_to_xyxy, box_xyxy_to_cxcywh,
                              build_anchor_grid, encode_box, iou)
from textdet.rpn import (IGNORE, NEGATIVE, POSITIVE, AnchorLabels, RpnHead,
                         RpnLossConfig, RpnPrediction, assign_anchor_labels,
                         extract_proposals, rpn_loss, sample_minibatch)


def make_fm(rng, channels=8, size=4, stride=8):
    data = rng.standard_normal((channels, size, size)).astype(np.float32)
    return FeatureMap(tensor=T.Tensor(data), feature_stride=stride)


def test_head_output_shapes(rng):
    head = RpnHead(in_channels=8, rng=rng, hidden=16)
    grid = build_anchor_grid(32, 8, 16.0)
    pred = head(make_fm(rng, size=4), grid)
    assert pred.objectness.shape == (16,)
    assert pred.regression.shape == (16, 4)
    assert ((pred.objectness.data > 0) & (pred.objectness.data < 1)).all()


def test_head_zero_weights_give_half_objectness(rng):
    head = RpnHead(in_channels=4, rng=rng, hidden=8)
    for p in head.params("rpn").values():
        p.data[...] = 0.0
    grid = build_anchor_grid(32, 8, 16.0)
    pred = head(make_fm(rng, channels=4, size=4), grid)
    assert np.allclose(pred.objectness.data, 0.5)
    assert np.allclose(pred.regression.data, 0.0)


def test_head_flattening_is_row_major(rng):
    """Anchor k must read from feature cell (k // W, k % W)."""
    head = RpnHead(in_channels=4, rng=rng, hidden=8)
    for p in head.params("rpn").values():
        p.data[...] = 0.0
    # shared conv passes channel 0 through; objectness conv reads hidden 0
    head.conv.w.data[0, 0, 1, 1] = 1.0
    head.obj.w.data[0, 0, 0, 0] = 1.0

    fm = make_fm(rng, channels=4, size=4)
    cell_values = np.maximum(fm.tensor.data[0], 0.0)  # relu of the passthrough
    grid = build_anchor_grid(32, 8, 16.0)
    obj = head(fm, grid).objectness.data
    expect = 1.0 / (1.0 + np.exp(-cell_values.reshape(-1)))
    assert np.allclose(obj, expect, atol=1e-6)


def test_head_gradients_flow_to_feature_map(rng):
    head = RpnHead(in_channels=4, rng=rng, hidden=8)
    data = rng.standard_normal((4, 4, 4)).astype(np.float32)
    fm_tensor = T.Tensor(data, requires_grad=True)
    fm = FeatureMap(tensor=fm_tensor, feature_stride=8)
    pred = head(fm, build_anchor_grid(32, 8, 16.0))
    T.backward(T.add(T.mean_all(pred.objectness), T.mean_all(pred.regression)))
    assert fm_tensor.grad is not None
    assert np.abs(fm_tensor.grad).max() > 0


def test_head_gradcheck(rng):
    head = RpnHead(in_channels=3, rng=rng, hidden=4, dtype=np.float64)
    x = T.Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True, dtype=np.float64)
    fm = FeatureMap(tensor=x, feature_stride=8)
    grid = build_anchor_grid(16, 8, 8.0)
    params = [x] + list(head.params("rpn").values())

    def loss():
        pred = head(fm, grid)
        return T.add(T.mean_all(T.mul(pred.objectness, pred.objectness)),
                     T.mean_all(T.smooth_l1(T.scale(pred.regression, 0.3))))

    assert max_rel_err(loss, params) < 1e-4


# --- anchor labeling -------------------------------------------------------

def assign_reference(grid, gt_boxes, iou_pos, iou_neg):
    """Literal reading of the labeling rules, one anchor at a time."""
    anchors = grid.anchors_xyxy
    a_n, g_n = len(anchors), len(gt_boxes)
    label = np.full(a_n, IGNORE, dtype=np.int64)
    matched = np.full(a_n, -1, dtype=np.int64)
    if g_n == 0:
        return np.full(a_n, NEGATIVE, dtype=np.int64), matched, np.zeros((a_n, 4))
    m = np.zeros((a_n, g_n))
    for i in range(a_n):
        for j in range(g_n):
            m[i, j] = iou(anchors[i], gt_boxes[j])
    best_per_anchor = m.max(axis=1)
    label[best_per_anchor < iou_neg] = NEGATIVE
    label[best_per_anchor > iou_pos] = POSITIVE
    # per-GT argmax anchors are positive whenever any overlap exists,
    # overriding a negative from the threshold pass
    for j in range(g_n):
        col_max = m[:, j].max()
        if col_max > 0:
            for i in range(a_n):
                if m[i, j] == col_max:
                    label[i] = POSITIVE
    targets = np.zeros((a_n, 4))
    for i in range(a_n):
        if label[i] == POSITIVE:
            matched[i] = int(m[i].argmax())
            targets[i] = encode_box(box_xyxy_to_cxcywh(gt_boxes[matched[i]]),
                                    grid.anchors[i])
    return label, matched, targets


def random_instance(rng):
    stride = int(rng.choice([4, 8]))
    cells = int(rng.integers(2, 5))
    size = stride * cells
    grid = build_anchor_grid(size, stride, float(rng.uniform(0.8, 1.6) * stride))
    n_gt = int(rng.integers(0, 6))
    gts = []
    for _ in range(n_gt):
        x1, y1 = rng.uniform(0, size * 0.7, 2)
        w, h = rng.uniform(2.0, size * 0.5, 2)
        gts.append([x1, y1, x1 + w, y1 + h])
    return grid, np.array(gts, dtype=np.float64).reshape(n_gt, 4)


def test_assignment_matches_reference(rng):
    cfg = RpnLossConfig()
    for _ in range(200):
        grid, gts = random_instance(rng)
        got = assign_anchor_labels(grid, gts, cfg)
        want_label, want_matched, want_targets = assign_reference(
            grid, gts, cfg.iou_pos, cfg.iou_neg)
        assert np.array_equal(got.label, want_label)
        assert np.array_equal(got.matched_gt, want_matched)
        pos = want_label == POSITIVE
        assert np.allclose(got.target[pos], want_targets[pos], atol=1e-9)


def test_every_overlapped_gt_keeps_its_best_anchors_positive(rng):
    cfg = RpnLossConfig()
    for _ in range(100):
        grid, gts = random_instance(rng)
        labels = assign_anchor_labels(grid, gts, cfg)
        anchors = grid.anchors_xyxy
        for g in gts:
            ious = np.array([iou(a, g) for a in anchors])
            if ious.max() > 0:
                assert (labels.label[ious == ious.max()] == POSITIVE).all()


def test_assignment_no_objects_all_negative():
    grid = build_anchor_grid(32, 8, 16.0)
    labels = assign_anchor_labels(grid, np.zeros((0, 4)), RpnLossConfig())
    assert (labels.label == NEGATIVE).all()
    assert (labels.matched_gt == -1).all()


def test_assignment_exact_anchor_box_is_positive():
    grid = build_anchor_grid(32, 8, 16.0)
    gt = box_cxcywh_to_xyxy(grid.anchors[5]).reshape(1, 4)
    labels = assign_anchor_labels(grid, gt, RpnLossConfig())
    assert labels.label[5] == POSITIVE
    assert labels.matched_gt[5] == 0
    assert np.allclose(labels.target[5], 0.0)


def test_low_iou_best_anchor_still_positive():
    """A tiny object below the positive threshold keeps its best anchor."""
    grid = build_anchor_grid(32, 8, 16.0)
    gt = np.array([[0.0, 0.0, 5.0, 5.0]])  # IoU with its best anchor well under 0.6
    cfg = RpnLossConfig()
    labels = assign_anchor_labels(grid, gt, cfg)
    best = int(np.argmax([iou(a, gt[0]) for a in grid.anchors_xyxy]))
    assert iou(grid.anchors_xyxy[best], gt[0]) < cfg.iou_pos
    assert labels.label[best] == POSITIVE
    assert labels.matched_gt[best] == 0


def test_ignore_band_between_thresholds():
    grid = build_anchor_grid(32, 8, 16.0)
    cfg = RpnLossConfig()
    # a box straddling several anchors: its non-best overlapped anchors with
    # IoU in [0.1, 0.6] stay ignored
    gt = np.array([[6.0, 6.0, 24.0, 24.0]])
    labels = assign_anchor_labels(grid, gt, cfg)
    ious = np.array([iou(a, gt[0]) for a in grid.anchors_xyxy])
    best = ious.max()
    banded = (ious >= cfg.iou_neg) & (ious <= cfg.iou_pos) & (ious < best)
    assert (labels.label[banded] == IGNORE).all()


def test_matched_gt_tie_prefers_lower_index():
    grid = build_anchor_grid(16, 8, 8.0)
    anchor_corner = box_cxcywh_to_xyxy(grid.anchors[0])
    gt = np.stack([anchor_corner, anchor_corner])  # identical boxes, both tie
    labels = assign_anchor_labels(grid, gt, RpnLossConfig())
    assert labels.label[0] == POSITIVE
    assert labels.matched_gt[0] == 0


# --- minibatch sampling ----------------------------------------------------

def label_fixture(pos_idx, neg_idx, total):
    label = np.full(total, IGNORE, dtype=np.int64)
    label[list(pos_idx)] = POSITIVE
    label[list(neg_idx)] = NEGATIVE
    return AnchorLabels(label=label, matched_gt=np.full(total, -1, dtype=np.int64),
                        target=np.zeros((total, 4)))


def test_sample_balances_positives_and_negatives():
    labels = label_fixture(range(3), range(10, 20), 30)
    idx = sample_minibatch(labels, seed=0)
    assert len(idx) == 6
    sel = labels.label[idx]
    assert (sel == POSITIVE).sum() == 3
    assert (sel == NEGATIVE).sum() == 3
    assert len(set(idx.tolist())) == 6


def test_sample_takes_all_negatives_when_scarce():
    labels = label_fixture(range(5), [20, 21], 30)
    idx = sample_minibatch(labels, seed=1)
    assert (labels.label[idx] == POSITIVE).sum() == 5
    assert (labels.label[idx] == NEGATIVE).sum() == 2


def test_sample_empty_without_positives():
    labels = label_fixture([], range(10), 20)
    assert sample_minibatch(labels, seed=2).size == 0


def test_sample_is_deterministic_per_seed():
    labels = label_fixture(range(4), range(8, 28), 40)
    a = sample_minibatch(labels, seed=7)
    b = sample_minibatch(labels, seed=7)
    c = sample_minibatch(labels, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# --- loss ------------------------------------------------------------------

def pred_fixture(objectness, regression):
    return RpnPrediction(objectness=T.Tensor(np.asarray(objectness, dtype=np.float64)),
                         regression=T.Tensor(np.asarray(regression, dtype=np.float64)))


def test_rpn_loss_classification_ln2_at_half():
    """p = 0.5 on a balanced sample with zero regression error."""
    total = 8
    labels = label_fixture([0, 1], [4, 5], total)
    pred = pred_fixture(np.full(total, 0.5), np.zeros((total, 4)))
    loss = rpn_loss(pred, labels, np.array([0, 1, 4, 5]), RpnLossConfig())
    assert float(loss.data) == pytest.approx(np.log(2.0), abs=1e-6)


def test_rpn_loss_perfect_predictions_near_zero():
    total = 6
    labels = label_fixture([0], [3], total)
    obj = np.zeros(total)
    obj[0] = 1.0
    pred = pred_fixture(obj, np.zeros((total, 4)))
    loss = rpn_loss(pred, labels, np.array([0, 3]), RpnLossConfig())
    assert float(loss.data) <= 1e-6


def test_rpn_loss_regression_term_quarter_offset():
    """One positive with a single coordinate off by 0.5 adds smoothL1 = 0.125."""
    total = 4
    labels = label_fixture([0], [2], total)
    reg = np.zeros((total, 4))
    reg[0, 0] = 0.5
    pred_clean = pred_fixture(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros((total, 4)))
    pred_off = pred_fixture(np.array([1.0, 0.0, 0.0, 0.0]), reg)
    sample = np.array([0, 2])
    cfg = RpnLossConfig()
    base = float(rpn_loss(pred_clean, labels, sample, cfg).data)
    off = float(rpn_loss(pred_off, labels, sample, cfg).data)
    # lambda * (1/N_reg) * 0.125 with one positive
    assert off - base == pytest.approx(cfg.lam * 0.125, abs=1e-9)


def test_rpn_loss_gradcheck(rng):
    total = 12
    labels = label_fixture(range(3), range(6, 9), total)
    labels.target[:3] = rng.uniform(-0.4, 0.4, (3, 4))
    obj = T.Tensor(rng.uniform(0.2, 0.8, total), requires_grad=True, dtype=np.float64)
    reg = T.Tensor(rng.uniform(-0.4, 0.4, (total, 4)), requires_grad=True,
                   dtype=np.float64)
    sample = np.array([0, 1, 2, 6, 7, 8])
    cfg = RpnLossConfig()

    def loss():
        return rpn_loss(RpnPrediction(objectness=obj, regression=reg),
                        labels, sample, cfg)

    assert max_rel_err(loss, [obj, reg]) < 1e-4


# --- proposal extraction ---------------------------------------------------

def test_extract_proposals_thresholds_and_orders(rng):
    grid = build_anchor_grid(64, 8, 16.0)
    n = len(grid)
    obj = np.full(n, 0.05)
    obj[10], obj[40], obj[50] = 0.9, 0.7, 0.95
    pred = pred_fixture(obj, np.zeros((n, 4)))
    props = extract_proposals(pred, grid, 64, conf_threshold=0.5, nms_iou=0.5,
                              max_proposals=100)
    assert [p.source_anchor for p in props] == [50, 10, 40]
    confs = [p.confidence for p in props]
    assert confs == sorted(confs, reverse=True)
    for p in props:
        x1, y1, x2, y2 = p.box
        assert 0 <= x1 <= x2 <= 64 and 0 <= y1 <= y2 <= 64


def test_extract_proposals_nms_suppresses_duplicates():
    grid = build_anchor_grid(32, 8, 16.0)
    n = len(grid)
    obj = np.zeros(n)
    obj[5], obj[6] = 0.8, 0.9
    reg = np.zeros((n, 4))
    # move anchor 5 onto anchor 6 so they collide
    reg[5] = encode_box(grid.anchors[6], grid.anchors[5])
    pred = pred_fixture(obj, reg)
    props = extract_proposals(pred, grid, 32, conf_threshold=0.5, nms_iou=0.5,
                              max_proposals=100)
    assert [p.source_anchor for p in props] == [6]


def test_extract_proposals_cap(rng):
    grid = build_anchor_grid(64, 8, 16.0)
    pred = pred_fixture(rng.uniform(0.6, 1.0, len(grid)), np.zeros((len(grid), 4)))
    props = extract_proposals(pred, grid, 64, conf_threshold=0.5, nms_iou=0.99,
                              max_proposals=5)
    assert len(props) == 5


def test_extract_proposals_decodes_regression():
    grid = build_anchor_grid(32, 8, 16.0)
    n = len(grid)
    obj = np.zeros(n)
    obj[0] = 0.9
    target = np.array([0.25, 0.25, np.log(1.25), np.log(1.25)])
    reg = np.zeros((n, 4))
    reg[0] = target
    pred = pred_fixture(obj, reg)
    props = extract_proposals(pred, grid, 32, conf_threshold=0.5, nms_iou=0.5,
                              max_proposals=10)
    want = box_cxcywh_to_xyxy(decode_like(grid.anchors[0], target))
    want = np.clip(want, 0.0, 32.0)
    assert np.allclose(props[0].box, want, atol=1e-9)


def decode_like(anchor, t):
    cx = t[0] * anchor[2] + anchor[0]
    cy = t[1] * anchor[3] + anchor[1]
    return np.array([cx, cy, anchor[2] * np.exp(t[2]), anchor[3] * np.exp(t[3])])
