import numpy as np
import pytest

from duckseg.gridmath import ShapeError, make_rng
from duckseg.metrics import (
    IOU_THRESHOLDS,
    Box,
    ConfusionCounts,
    average_precision,
    box_iou,
    class_ap,
    confusion_counts,
    detection_report,
    iou_dice,
    match_detections,
    mean_ap,
    misclassification_error,
    precision_recall_f1,
    report_from_counts,
    segmentation_report,
)

from .oracles import all_binary_masks, counts_oracle, eq11_ap, greedy_flags, iou_boxes, safe_ratio


# --- confusion counts --------------------------------------------------------

def test_counts_identity():
    m = make_rng(0).integers(0, 3, size=(5, 5))
    c = confusion_counts(m, m, 3)
    assert not c.fp.any() and not c.fn.any()


def test_counts_spec_example():
    pred = np.array([[1, 0], [0, 0]])
    truth = np.array([[1, 1], [0, 0]])
    c = confusion_counts(pred, truth, 2)
    assert (c.tp[1], c.fp[1], c.fn[1], c.tn[1]) == (1, 0, 1, 2)


def test_counts_all_background():
    z = np.zeros((3, 4), dtype=int)
    assert confusion_counts(z, z, 3).tp[0] == 12


def test_counts_validation():
    with pytest.raises(ShapeError):
        confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)), 2)
    with pytest.raises(ValueError):
        confusion_counts(np.full((2, 2), 2), np.zeros((2, 2)), 2)


def test_counts_add_and_total():
    rng = make_rng(1)
    a, b = rng.integers(0, 3, size=(2, 4, 4))
    c = confusion_counts(a, b, 3) + confusion_counts(b, a, 3)
    assert c.total == 32
    assert np.all(c.tp + c.fp + c.fn + c.tn == 32)


# --- ratios --------------------------------------------------------------------

def test_precision_hand():
    c = ConfusionCounts(np.array([3]), np.array([1]), np.array([0]), np.array([0]))
    assert precision_recall_f1(c)[0][0] == 0.75


def test_f1_symmetric():
    c = ConfusionCounts(np.array([4]), np.array([1]), np.array([1]), np.array([0]))
    p, r, f = precision_recall_f1(c)
    assert p[0] == r[0] == 0.8
    assert abs(f[0] - 0.8) < 1e-15


def test_recall_table_shape():
    c = ConfusionCounts(np.array([96530]), np.array([0]), np.array([3470]), np.array([0]))
    assert abs(precision_recall_f1(c)[1][0] - 0.9653) < 1e-12


def test_degenerate_ratios():
    # class 1 absent from both; class 2 predicted but never true
    pred = np.array([[0, 2]])
    truth = np.array([[0, 0]])
    p, r, f = precision_recall_f1(confusion_counts(pred, truth, 3))
    assert (p[1], r[1]) == (1.0, 1.0)
    assert (p[2], r[2], f[2]) == (0.0, 0.0, 0.0)


def test_segmentation_report_identity():
    m = make_rng(2).integers(0, 3, size=(6, 6))
    rep = segmentation_report(m, m, 3)
    assert rep.miou == rep.mdice == 1.0
    assert rep.me == 0.0


def test_me_complement():
    truth = np.array([[0, 1], [2, 0]])
    pred = np.where(truth > 0, 0, 1)
    assert segmentation_report(pred, truth, 3).me == 1.0


def test_spec_2x2_report():
    pred = np.array([[1, 0], [0, 0]])
    truth = np.array([[1, 1], [0, 0]])
    rep = segmentation_report(pred, truth, 2)
    assert rep.iou[1] == 0.5
    assert abs(rep.dice[1] - 2 / 3) < 1e-15
    assert rep.me == 0.25


def test_exhaustive_2x2_against_oracle():
    masks = list(all_binary_masks(2, 2))
    for pred in masks:
        for truth in masks:
            rep = segmentation_report(pred, truth, 2)
            c = confusion_counts(pred, truth, 2)
            ious, dices = [], []
            for k in range(2):
                tp, fp, fn, tn = counts_oracle(pred, truth, k)
                assert (c.tp[k], c.fp[k], c.fn[k], c.tn[k]) == (tp, fp, fn, tn)
                absent = tp + fp + fn == 0
                iou = safe_ratio(tp, tp + fp + fn, True)
                dice = safe_ratio(2 * tp, 2 * tp + fp + fn, True)
                p = safe_ratio(tp, tp + fp, absent)
                r = safe_ratio(tp, tp + fn, absent)
                f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
                assert rep.iou[k] == iou and rep.dice[k] == dice
                assert rep.precision[k] == p and rep.recall[k] == r and rep.f1[k] == f
                assert abs(dice - 2 * iou / (1 + iou)) < 1e-15
                ious.append(iou)
                dices.append(dice)
            assert rep.miou == sum(ious) / 2 and rep.mdice == sum(dices) / 2
            agree = sum(1 for a, b in zip(pred.ravel(), truth.ravel()) if (a > 0) == (b > 0))
            assert rep.me == 1 - agree / 4


def test_random_metric_properties():
    rng = make_rng(3)
    for _ in range(50):
        pred, truth = rng.integers(0, 4, size=(2, 5, 6))
        rep = segmentation_report(pred, truth, 4)
        iou, dice = np.array(rep.iou), np.array(rep.dice)
        np.testing.assert_allclose(dice, 2 * iou / (1 + iou), rtol=1e-14)
        assert rep.miou <= rep.mdice + 1e-15
        assert 0.0 <= rep.me <= 1.0
        perm = rng.permutation(30)
        rp = segmentation_report(pred.ravel()[perm].reshape(5, 6), truth.ravel()[perm].reshape(5, 6), 4)
        assert rp.to_dict() == rep.to_dict()


def test_misclassification_empty():
    assert misclassification_error(ConfusionCounts.zeros(2)) == 0.0


def test_report_from_counts_iou_dice_consistency():
    c = confusion_counts(np.array([[0, 1, 1]]), np.array([[1, 1, 0]]), 2)
    iou, dice = iou_dice(c)
    rep = report_from_counts(c)
    assert rep.iou == iou.tolist() and rep.dice == dice.tolist()


# --- boxes ---------------------------------------------------------------------

def test_box_iou_cases():
    a = Box(0, 0, 2, 2)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, Box(5, 5, 1, 1)) == 0.0
    assert abs(box_iou(a, Box(1, 1, 2, 2)) - 1 / 7) < 1e-15


def test_box_iou_matches_pixel_oracle():
    rng = make_rng(4)
    for _ in range(200):
        a = tuple(int(v) for v in rng.integers(0, 6, 2)) + tuple(int(v) for v in rng.integers(1, 5, 2))
        b = tuple(int(v) for v in rng.integers(0, 6, 2)) + tuple(int(v) for v in rng.integers(1, 5, 2))
        assert abs(box_iou(Box(*a), Box(*b)) - iou_boxes(a, b)) < 1e-15


def test_box_validation_and_dict():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1)
    b = Box(1, 2, 3, 4, 2, 0.5)
    assert Box.from_dict(b.to_dict()) == b
    assert "score" not in Box(1, 2, 3, 4).to_dict()


# --- matching and AP ---------------------------------------------------------

def test_match_single():
    t = Box(0, 0, 4, 4)
    assert match_detections([Box(0, 0, 4, 4, score=0.9)], [t]) == [(0.9, True)]
    assert match_detections([Box(0, 0, 4, 4, score=0.9)], []) == [(0.9, False)]


def test_match_two_preds_one_truth():
    truth = Box(0, 0, 10, 10)
    exact = Box(0, 0, 10, 10, score=0.5)
    partial = Box(0, 0, 10, 6, score=0.9)  # IoU 0.6
    flags = match_detections([exact, partial], [truth], 0.5)
    assert flags == [(0.9, True), (0.5, False)]
    oracle = greedy_flags([((0, 0, 10, 10), 0.5), ((0, 0, 10, 6), 0.9)], [(0, 0, 10, 10)], 0.5)
    assert flags == oracle


def test_match_stable_ties():
    truth = [Box(0, 0, 4, 4)]
    preds = [Box(0, 0, 4, 4, score=0.5), Box(0, 0, 4, 4, score=0.5)]
    assert [f for _, f in match_detections(preds, truth)] == [True, False]


AP_CASES = [
    ([True], 1, 1.0),
    ([True, False], 1, 1.0),
    ([False, True], 1, 0.5),
    ([], 0, 1.0),
    ([False], 0, 0.0),
    ([], 3, 0.0),
    ([True, True, True], 3, 1.0),
    ([True, False, True], 2, 0.5 * (1 + 2 / 3)),
    ([False, False, True, True], 2, 0.5 * (1 / 3 + 2 / 4)),
    ([True, False, False, True, False], 4, 0.25 * (1 + 2 / 4)),
    ([False, True, False, True, True], 3, (1 / 2 + 2 / 4 + 3 / 5) / 3),
    ([True, True, False, False], 5, (1 + 1) / 5),
]


@pytest.mark.parametrize("flags,n,expected", AP_CASES)
def test_average_precision_cases(flags, n, expected):
    ranked = [(1.0 - 0.1 * i, f) for i, f in enumerate(flags)]
    assert abs(average_precision(ranked, n) - expected) < 1e-12
    assert abs(average_precision(ranked, n) - eq11_ap(flags, n)) < 1e-12


def test_ap_rank_only():
    truths = [Box(0, 0, 4, 4), Box(10, 10, 4, 4)]
    preds = [Box(0, 0, 4, 4, score=0.3), Box(20, 20, 2, 2, score=0.8), Box(10, 10, 4, 3, score=0.5)]
    base = class_ap(preds, truths, 0, 0.5)
    scaled = [Box(b.x, b.y, b.w, b.h, score=b.score**3 * 0.5) for b in preds]
    assert class_ap(scaled, truths, 0, 0.5) == base


def test_mean_ap_perfect_and_empty():
    truths = [[Box(0, 0, 4, 4, 1), Box(8, 8, 3, 3, 2)], [Box(1, 1, 2, 5, 1)]]
    preds = [[Box(b.x, b.y, b.w, b.h, b.class_id, 0.9) for b in img] for img in truths]
    per, mean = mean_ap(preds, truths)
    assert len(per) == 10 and all(v == 1.0 for v in per.values()) and mean == 1.0
    per, mean = mean_ap([[], []], truths)
    assert mean == 0.0


def test_iou_thresholds():
    assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def brute_force_map(preds, truths, classes):
    """Per threshold, per class: greedy flags per image, global stable ranking, literal AP sum."""
    per = {}
    for thr in [0.5 + 0.05 * k for k in range(10)]:
        aps = []
        for c in classes:
            flags, n = [], 0
            for p_img, t_img in zip(preds, truths):
                pc = [((b[0], b[1], b[2], b[3]), b[5]) for b in p_img if b[4] == c]
                tc = [(b[0], b[1], b[2], b[3]) for b in t_img if b[4] == c]
                n += len(tc)
                flags += greedy_flags(pc, tc, thr - 1e-12)
            flags.sort(key=lambda f: -f[0])
            aps.append(eq11_ap([f for _, f in flags], n))
        per[round(thr, 2)] = sum(aps) / len(aps)
    return per


def test_mean_ap_two_class_brute_force():
    rng = make_rng(5)
    truths, preds = [], []
    for _ in range(4):
        t_img, p_img = [], []
        for _ in range(int(rng.integers(1, 4))):
            x, y = (int(v) for v in rng.integers(0, 20, 2))
            w, h = (int(v) for v in rng.integers(3, 8, 2))
            c = int(rng.integers(1, 3))
            t_img.append((x, y, w, h, c))
            dx, dy = (int(v) for v in rng.integers(-2, 3, 2))
            p_img.append((x + dx, y + dy, w, h, c, float(rng.random())))
        for _ in range(int(rng.integers(0, 3))):
            x, y = (int(v) for v in rng.integers(0, 20, 2))
            p_img.append((x, y, 4, 4, int(rng.integers(1, 3)), float(rng.random())))
        truths.append(t_img)
        preds.append(p_img)
    bt = [[Box(*b) for b in img] for img in truths]
    bp = [[Box(*b) for b in img] for img in preds]
    per, mean = mean_ap(bp, bt, classes=[1, 2])
    oracle = brute_force_map(preds, truths, [1, 2])
    for thr in IOU_THRESHOLDS:
        assert abs(per[thr] - oracle[thr]) < 1e-12
    assert abs(mean - sum(oracle.values()) / 10) < 1e-12


def test_detection_report_counts():
    truths = [[Box(0, 0, 4, 4, 1)], [Box(0, 0, 4, 4, 1), Box(9, 9, 4, 4, 1)]]
    preds = [[Box(0, 0, 4, 4, 1, 0.9), Box(20, 20, 2, 2, 1, 0.1)], [Box(9, 9, 4, 4, 1, 0.8)]]
    rep = detection_report(preds, truths)
    assert rep.precision == [2 / 3] and rep.recall == [2 / 3]
    assert abs(rep.map_50 - eq11_ap([True, True, False], 3)) < 1e-12


def test_mean_ap_image_count_mismatch():
    with pytest.raises(ValueError):
        mean_ap([[], []], [[]])
