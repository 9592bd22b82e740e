import math

import numpy as np
import pytest

from maskver.detector import Detection, DetectionClass
from maskver.evaluation import (
    GroundTruthBox,
    average_precision,
    evaluate_detections,
    format_predictions,
    load_ground_truth,
    match_detections,
    mean_average_precision,
    parse_labels,
    parse_predictions_file,
    pr_curves_csv,
    pr_points,
    precision,
    recall,
    train_test_split,
    verification_from_distances,
    verification_protocol,
)
from maskver.geometry import BoundingBox


def det(x1, y1, x2, y2, conf, label=DetectionClass.mask):
    return Detection(BoundingBox(x1, y1, x2, y2), label, conf)


def gt(x1, y1, x2, y2, label=DetectionClass.mask):
    return GroundTruthBox(label, BoundingBox(x1, y1, x2, y2))


# ---------------------------------------------------------------------------
# Independent AP oracle: enumerate every confidence cut, build the full PR
# point set, integrate the precision envelope by rectangle sum.
# ---------------------------------------------------------------------------

def oracle_ap(confidences, flags, total_gt):
    pairs = list(zip(confidences, flags))
    points = []
    for cut in sorted(set(confidences)):
        selected = [flag for conf, flag in pairs if conf >= cut]
        tp = sum(selected)
        fp = len(selected) - tp
        r = tp / total_gt
        p = tp / (tp + fp) if tp + fp else 0.0
        points.append((r, p))
    recalls = sorted({r for r, _ in points} | {0.0})
    area = 0.0
    for r_prev, r in zip(recalls, recalls[1:]):
        envelope = max(p for rr, p in points if rr >= r)
        area += (r - r_prev) * envelope
    return area


class TestParseLabels:
    def test_denormalization(self):
        boxes = parse_labels("0 0.5 0.5 0.5 0.5", 640, 640)
        assert len(boxes) == 1
        assert boxes[0].label is DetectionClass.mask
        assert boxes[0].box.as_tuple() == (160, 160, 480, 480)

    def test_empty_text(self):
        assert parse_labels("", 640, 640) == []

    def test_unknown_class(self):
        with pytest.raises(ValueError, match="unknown class"):
            parse_labels("2 0.5 0.5 0.1 0.1", 640, 640)

    def test_malformed_line_reports_number(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_labels("0 0.5 0.5 0.5 0.5\n1 0.1 0.2", 640, 640)

    def test_out_of_range_value(self):
        with pytest.raises(ValueError, match="outside"):
            parse_labels("0 1.5 0.5 0.5 0.5", 640, 640)

    def test_no_mask_class_index(self):
        boxes = parse_labels("1 0.5 0.5 0.25 0.25", 100, 200)
        assert boxes[0].label is DetectionClass.no_mask


class TestMatchDetections:
    def test_exact_hit(self):
        _, flags, fn = match_detections([det(0, 0, 10, 10, 0.9)],
                                        [gt(0, 0, 10, 10)])
        assert flags == [True]
        assert fn == 0

    def test_second_prediction_cannot_rematch(self):
        preds = [det(0, 0, 10, 10, 0.9), det(0.5, 0.5, 10.5, 10.5, 0.8)]
        _, flags, fn = match_detections(preds, [gt(0, 0, 10, 10)])
        assert flags == [True, False]
        assert fn == 0

    def test_class_gate(self):
        preds = [det(0, 0, 10, 10, 0.9, DetectionClass.mask)]
        _, flags, fn = match_detections(preds, [gt(0, 0, 10, 10,
                                                   DetectionClass.no_mask)])
        assert flags == [False]
        assert fn == 1

    def test_iou_below_threshold_is_fp(self):
        _, flags, fn = match_detections([det(0, 0, 10, 10, 0.9)],
                                        [gt(8, 8, 18, 18)])
        assert flags == [False]
        assert fn == 1

    def test_tp_bounded_by_gt_count(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            preds = [det(x, x, x + 10, x + 10, float(rng.uniform(0.1, 1)))
                     for x in rng.uniform(0, 50, rng.integers(0, 8))]
            gts = [gt(x, x, x + 10, x + 10)
                   for x in rng.uniform(0, 50, rng.integers(0, 5))]
            _, flags, fn = match_detections(preds, gts)
            assert sum(flags) <= len(gts)
            assert sum(flags) + fn == len(gts)


class TestPrecisionRecall:
    def test_values(self):
        assert precision(5, 3) == 0.625
        assert recall(5, 5) == 0.5

    def test_degenerate_zero(self):
        assert precision(0, 0) == 0.0
        assert recall(0, 0) == 0.0


class TestAveragePrecision:
    def test_perfect_single(self):
        assert average_precision([True], 1) == 1.0

    def test_spec_example(self):
        assert average_precision([True, False, True], 2) == pytest.approx(
            0.5 * 1.0 + 0.5 * (2 / 3), abs=1e-12)
        assert average_precision([True, False, True], 2) == pytest.approx(
            0.8333, abs=1e-4)

    def test_all_false(self):
        assert average_precision([False, False], 1) == 0.0

    def test_undefined_without_ground_truth(self):
        assert average_precision([True], 0) is None

    def test_tied_confidences_form_one_cut(self):
        # no threshold separates two equal confidences: the only real PR
        # point is (recall 1, precision 0.5), so AP = 0.5, not 1.0
        assert average_precision([True, False], 1,
                                 confidences=[0.5, 0.5]) == 0.5
        assert average_precision([False, True], 1,
                                 confidences=[0.5, 0.5]) == 0.5

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(500):
            n = int(rng.integers(1, 11))
            total_gt = int(rng.integers(1, 6))
            confidences = [float(c) for c in
                           rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)]
            max_tp = min(n, total_gt)
            n_tp = int(rng.integers(0, max_tp + 1))
            flags = [True] * n_tp + [False] * (n - n_tp)
            rng.shuffle(flags)
            order = np.argsort([-c for c in confidences], kind="stable")
            sorted_flags = [flags[i] for i in order]
            sorted_confs = [confidences[i] for i in order]
            got = average_precision(sorted_flags, total_gt, confidences=sorted_confs)
            want = oracle_ap(confidences, flags, total_gt)
            assert got == pytest.approx(want, abs=1e-9)


class TestMeanAveragePrecision:
    def test_simple_mean(self):
        assert mean_average_precision({"mask": 1.0, "no_mask": 0.5}) == 0.75
        assert mean_average_precision({"mask": 1.0, "no_mask": 1.0}) == 1.0

    def test_derived_example(self):
        ap = average_precision([True, False, True], 2)
        assert mean_average_precision({"mask": ap, "no_mask": 0.0}) == pytest.approx(
            0.41665, abs=1e-4)

    def test_missing_class_warns_and_averages_defined(self, caplog):
        with caplog.at_level("WARNING"):
            got = mean_average_precision({"mask": 0.8, "no_mask": None})
        assert got == 0.8
        assert "no_mask" in caplog.text

    def test_no_defined_class_raises(self):
        with pytest.raises(ValueError):
            mean_average_precision({"mask": None, "no_mask": None})


class TestEvaluateDetections:
    def make_perfect(self):
        per_image = {}
        rng = np.random.default_rng(5)
        for i in range(4):
            gts = []
            preds = []
            for _ in range(int(rng.integers(1, 4))):
                x, y = rng.uniform(0, 400, 2)
                w, h = rng.uniform(20, 100, 2)
                label = DetectionClass(int(rng.integers(0, 2)))
                gts.append(gt(x, y, x + w, y + h, label))
                preds.append(det(x, y, x + w, y + h, 1.0, label))
            per_image[f"img{i}"] = (preds, gts)
        return per_image

    def test_perfect_predictions_score_one_exactly(self):
        report = evaluate_detections(self.make_perfect())
        assert report.mean_ap == 1.0
        assert report.operating_precision == 1.0
        assert report.operating_recall == 1.0
        assert all(ap == 1.0 for ap in report.per_class_ap.values())

    def test_monotone_confidence_transform_invariance(self):
        rng = np.random.default_rng(17)
        per_image = {}
        for i in range(5):
            preds = [det(x, x, x + 20, x + 20, float(rng.uniform(0.05, 0.95)),
                         DetectionClass(int(rng.integers(0, 2))))
                     for x in rng.uniform(0, 200, 6)]
            gts = [gt(x, x, x + 20, x + 20,
                      DetectionClass(int(rng.integers(0, 2))))
                   for x in rng.uniform(0, 200, 3)]
            per_image[f"img{i}"] = (preds, gts)
        baseline = evaluate_detections(per_image, operating_confidence=1e-9)

        def squash(c):
            return 1 / (1 + math.exp(-7 * c))  # strictly monotone

        transformed = {
            stem: ([Detection(p.box, p.label, squash(p.confidence))
                    for p in preds], gts)
            for stem, (preds, gts) in per_image.items()
        }
        report = evaluate_detections(transformed, operating_confidence=1e-9)
        assert report.mean_ap == pytest.approx(baseline.mean_ap, abs=1e-12)
        for cls in baseline.per_class_ap:
            assert report.per_class_ap[cls] == pytest.approx(
                baseline.per_class_ap[cls], abs=1e-12)

    def test_report_json_and_table(self):
        report = evaluate_detections(self.make_perfect())
        payload = report.to_json()
        assert payload["mAP"] == 1.0
        assert set(payload["per_class_ap"]) == {"mask", "no_mask"}
        table = report.to_table()
        assert "mAP" in table and "mask" in table


class TestPrPoints:
    def test_cumulative_counts(self):
        points = pr_points([(0.9, True), (0.8, False), (0.7, True)], 2)
        assert [(p.tp, p.fp, p.fn) for p in points] == [(1, 0, 1), (1, 1, 1), (2, 1, 0)]
        assert points[0].precision == 1.0
        assert points[-1].recall == 1.0

    def test_csv_output(self):
        per_image = {"a": ([det(0, 0, 10, 10, 0.9)], [gt(0, 0, 10, 10)])}
        csv = pr_curves_csv(per_image)
        lines = csv.strip().splitlines()
        assert lines[0] == "class,confidence,tp,fp,fn,precision,recall"
        assert lines[1].startswith("mask,0.9")


class TestSplit:
    def test_8_2_over_2000(self):
        stems = [f"img{i:05d}" for i in range(2000)]
        train, test = train_test_split(stems, ratio=(8, 2), seed=7)
        assert len(train) == 1600
        assert len(test) == 400
        assert sorted(train + test) == sorted(stems)

    def test_deterministic_per_seed(self):
        stems = [f"s{i}" for i in range(37)]
        assert train_test_split(stems, seed=3) == train_test_split(stems, seed=3)
        assert train_test_split(stems, seed=3) != train_test_split(stems, seed=4)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            train_test_split(["a"], ratio=(1, 0))


class TestVerification:
    def test_perfectly_separable(self):
        distances = [0.1, 1.0] * 10
        labels = [True, False] * 10
        report = verification_from_distances(distances, labels, folds=10)
        assert report.mean_accuracy == 1.0
        assert report.std_accuracy == 0.0
        assert len(report.fold_accuracies) == 10

    def test_identical_distances_give_majority_fraction(self):
        distances = [0.5] * 20
        labels = [True, False] * 10
        report = verification_from_distances(distances, labels, folds=10)
        # every fold holds one of each class; no threshold separates them
        assert report.fold_accuracies == [0.5] * 10

    def test_twenty_pairs_ten_folds(self):
        distances = [0.1, 0.9] * 10
        labels = [True, False] * 10
        report = verification_from_distances(distances, labels, folds=10)
        assert len(report.fold_accuracies) == 10
        assert len(report.fold_thresholds) == 10

    def test_indivisible_pair_count(self):
        with pytest.raises(ValueError, match="multiple"):
            verification_from_distances([0.1] * 7, [True] * 7, folds=10)

    def test_single_class_fold_rejected(self):
        distances = [0.1, 0.2] * 5
        labels = [True] * 10
        with pytest.raises(ValueError, match="single class"):
            verification_from_distances(distances, labels, folds=5)

    def test_protocol_with_embedder(self):
        # stand-in embedder keyed by the chip's first value
        def embed(chip):
            v = np.zeros(128)
            v[0] = float(np.asarray(chip).ravel()[0])
            return v

        pairs = []
        for i in range(10):
            a = np.full((3, 4, 4), i, dtype=float)
            pairs.append((a, a.copy(), True))
            b = np.full((3, 4, 4), i + 100, dtype=float)
            pairs.append((a, b, False))
        report = verification_protocol(pairs, embed, folds=10)
        assert report.mean_accuracy == 1.0


class TestDatasetIO:
    def make_dataset(self, tmp_path, n=3):
        import cv2

        (tmp_path / "images").mkdir()
        (tmp_path / "labels").mkdir()
        for i in range(n):
            frame = np.zeros((100, 200, 3), np.uint8)
            cv2.imwrite(str(tmp_path / "images" / f"im{i}.png"), frame)
            (tmp_path / "labels" / f"im{i}.txt").write_text("0 0.5 0.5 0.2 0.4\n")
        return tmp_path

    def test_load_ground_truth(self, tmp_path):
        root = self.make_dataset(tmp_path)
        gts = load_ground_truth(root)
        assert set(gts) == {"im0", "im1", "im2"}
        box = gts["im0"][0].box
        assert box.as_tuple() == (80, 30, 120, 70)  # 200x100 image

    def test_missing_label_file_means_empty(self, tmp_path):
        root = self.make_dataset(tmp_path)
        (root / "labels" / "im1.txt").unlink()
        gts = load_ground_truth(root)
        assert gts["im1"] == []

    def test_malformed_label_lists_file(self, tmp_path):
        root = self.make_dataset(tmp_path)
        (root / "labels" / "im2.txt").write_text("9 0.5 0.5 0.1 0.1\n")
        with pytest.raises(ValueError, match="im2.txt"):
            load_ground_truth(root)

    def test_predictions_round_trip(self):
        per_stem = {
            "im0": [det(1, 2, 3, 4, 0.5)],
            "im1": [det(5, 6, 7, 8, 0.25, DetectionClass.no_mask)],
        }
        text = format_predictions(per_stem)
        back = parse_predictions_file(text)
        assert set(back) == {"im0", "im1"}
        assert back["im1"][0].label is DetectionClass.no_mask
        assert back["im0"][0].box.as_tuple() == (1, 2, 3, 4)
