"""Detection and verification scoring harness.

Datasets follow the normalized-text annotation layout: ``images/*.jpg|png``
with ``labels/*.txt`` sharing the stem, each label line being
``class cx cy w h`` with values normalized to [0, 1]. Predictions
interchange files carry one detection per line:
``image_stem class confidence x1 y1 x2 y2`` in pixels.

Average precision integrates the full precision envelope over recall
(all-points interpolation); mAP averages the per-class APs at IoU 0.5.
The pair-verification protocol picks, per fold, the distance threshold
that maximizes accuracy on the remaining folds and scores the held-out
fold, reporting mean accuracy and population standard deviation.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from maskver.detector import Detection, DetectionClass, _nms_sort_key
from maskver.gallery import euclidean_distance
from maskver.geometry import BoundingBox, iou

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class GroundTruthBox:
    label: DetectionClass
    box: BoundingBox


@dataclass(frozen=True)
class PRPoint:
    confidence: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


@dataclass
class EvalReport:
    per_class_ap: dict
    mean_ap: float
    operating_confidence: float
    operating_precision: float
    operating_recall: float
    images: int
    ground_truths: dict
    predictions: int
    iou_threshold: float

    def to_json(self) -> dict:
        return {
            "per_class_ap": dict(self.per_class_ap),
            "mAP": self.mean_ap,
            "operating_point": {
                "confidence": self.operating_confidence,
                "precision": self.operating_precision,
                "recall": self.operating_recall,
            },
            "counts": {
                "images": self.images,
                "ground_truths": dict(self.ground_truths),
                "predictions": self.predictions,
            },
            "iou_threshold": self.iou_threshold,
        }

    def to_table(self) -> str:
        lines = [
            f"{'class':<10} {'AP@%.2f' % self.iou_threshold:>10}",
            "-" * 21,
        ]
        for name, ap in self.per_class_ap.items():
            shown = "n/a" if ap is None else f"{ap:.4f}"
            lines.append(f"{name:<10} {shown:>10}")
        lines.append("-" * 21)
        lines.append(f"{'mAP':<10} {self.mean_ap:>10.4f}")
        lines.append(
            f"precision {self.operating_precision:.4f} / recall "
            f"{self.operating_recall:.4f} @ conf {self.operating_confidence}")
        return "\n".join(lines)


@dataclass
class VerificationReport:
    fold_accuracies: list
    mean_accuracy: float
    std_accuracy: float
    fold_thresholds: list

    def to_json(self) -> dict:
        return {
            "folds": len(self.fold_accuracies),
            "fold_accuracies": list(self.fold_accuracies),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "fold_thresholds": list(self.fold_thresholds),
        }


def parse_labels(text: str, image_w: float, image_h: float) -> list[GroundTruthBox]:
    """Parse normalized ``class cx cy w h`` lines into pixel ground truth."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            class_index = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        try:
            label = DetectionClass(class_index)
        except ValueError:
            raise ValueError(
                f"line {lineno}: unknown class index {class_index} "
                f"(valid: 0..{len(DetectionClass) - 1})") from None
        for field_name, value in zip(("cx", "cy", "w", "h"), (cx, cy, w, h)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(
                    f"line {lineno}: {field_name}={value} outside [0, 1]")
        boxes.append(GroundTruthBox(label, BoundingBox(
            (cx - w / 2) * image_w, (cy - h / 2) * image_h,
            (cx + w / 2) * image_w, (cy + h / 2) * image_h)))
    return boxes


def match_detections(preds: list[Detection], gts: list[GroundTruthBox],
                     iou_thresh: float = 0.5):
    """Greedy confidence-descending matching against ground truth.

    Returns (predictions in matching order, TP flags, unmatched GT count).
    Each ground truth is consumed by at most one prediction, and only by a
    prediction of its own class with IoU at or above the threshold.
    """
    ordered = sorted(preds, key=_nms_sort_key)
    taken = [False] * len(gts)
    flags = []
    for pred in ordered:
        best_iou = 0.0
        best_idx = None
        for idx, gt in enumerate(gts):
            if taken[idx] or gt.label != pred.label:
                continue
            overlap = iou(pred.box, gt.box)
            if overlap >= iou_thresh and overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx is None:
            flags.append(False)
        else:
            taken[best_idx] = True
            flags.append(True)
    return ordered, flags, taken.count(False)


def precision(tp: int, fp: int) -> float:
    """TP / (TP + FP), defined as 0 when there are no positive predictions."""
    return tp / (tp + fp) if tp + fp > 0 else 0.0


def recall(tp: int, fn: int) -> float:
    """TP / (TP + FN), defined as 0 when there are no ground truths."""
    return tp / (tp + fn) if tp + fn > 0 else 0.0


def pr_points(scored, total_gt: int) -> list[PRPoint]:
    """Cumulative PR curve points, one per confidence cut (descending)."""
    ordered = sorted(scored, key=lambda s: -s[0])
    points = []
    tp = fp = 0
    for confidence, flag in ordered:
        tp += bool(flag)
        fp += not flag
        fn = total_gt - tp
        points.append(PRPoint(confidence, tp, fp, fn,
                              precision(tp, fp), recall(tp, fn)))
    return points


def average_precision(flags, total_gt: int, confidences=None):
    """Area under the interpolated PR curve for confidence-sorted flags.

    Predictions sharing a confidence form a single cut: no threshold can
    separate them, so only the PR point after the whole tie group is real
    (this also makes AP independent of arbitrary ordering inside ties).
    Pass ``confidences`` to enable the grouping; without them every flag
    is taken as its own strictly-descending cut. Returns None when the
    class has no ground truths (AP undefined).
    """
    if total_gt == 0:
        return None
    if not len(flags):
        return 0.0
    flags = np.asarray(flags, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    if confidences is not None:
        conf = np.asarray(confidences, dtype=float)
        if conf.shape != flags.shape:
            raise ValueError("confidences must align with flags")
        if np.any(np.diff(conf) > 0):
            raise ValueError("flags must be sorted by descending confidence")
        cut_ends = np.nonzero(np.append(conf[1:] != conf[:-1], True))[0]
        tp, fp = tp[cut_ends], fp[cut_ends]
    rec = tp / total_gt
    prec = tp / (tp + fp)
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_average_precision(per_class_ap: dict) -> float:
    """Arithmetic mean of the defined per-class APs."""
    defined = [ap for ap in per_class_ap.values() if ap is not None]
    if not defined:
        raise ValueError("no class has a defined AP")
    if len(defined) != len(per_class_ap):
        missing = [str(k) for k, ap in per_class_ap.items() if ap is None]
        logger.warning("mAP averaged over %d/%d classes (no ground truth for %s)",
                       len(defined), len(per_class_ap), ", ".join(missing))
    return float(sum(defined) / len(defined))


def evaluate_detections(per_image: dict, iou_thresh: float = 0.5,
                        operating_confidence: float = 0.25) -> EvalReport:
    """Score {stem: (predictions, ground_truths)} pairs into an EvalReport."""
    scored = {cls: [] for cls in DetectionClass}
    gt_counts = {cls: 0 for cls in DetectionClass}
    n_preds = 0
    for preds, gts in per_image.values():
        n_preds += len(preds)
        for gt in gts:
            gt_counts[gt.label] += 1
        ordered, flags, _ = match_detections(preds, gts, iou_thresh)
        for pred, flag in zip(ordered, flags):
            scored[pred.label].append((pred.confidence, flag))
    per_class_ap = {}
    for cls in DetectionClass:
        pairs = sorted(scored[cls], key=lambda s: -s[0])
        per_class_ap[cls.name] = average_precision(
            [flag for _, flag in pairs], gt_counts[cls],
            confidences=[conf for conf, _ in pairs])
    mean_ap = mean_average_precision(per_class_ap)
    tp = fp = 0
    for cls in DetectionClass:
        for confidence, flag in scored[cls]:
            if confidence >= operating_confidence:
                tp += bool(flag)
                fp += not flag
    total_gt = sum(gt_counts.values())
    return EvalReport(
        per_class_ap=per_class_ap,
        mean_ap=mean_ap,
        operating_confidence=operating_confidence,
        operating_precision=precision(tp, fp),
        operating_recall=recall(tp, total_gt - tp),
        images=len(per_image),
        ground_truths={cls.name: gt_counts[cls] for cls in DetectionClass},
        predictions=n_preds,
        iou_threshold=iou_thresh,
    )


def pr_curves_csv(per_image: dict, iou_thresh: float = 0.5) -> str:
    """PR curve points for every class as CSV (for external plotting)."""
    scored = {cls: [] for cls in DetectionClass}
    gt_counts = {cls: 0 for cls in DetectionClass}
    for preds, gts in per_image.values():
        for gt in gts:
            gt_counts[gt.label] += 1
        ordered, flags, _ = match_detections(preds, gts, iou_thresh)
        for pred, flag in zip(ordered, flags):
            scored[pred.label].append((pred.confidence, flag))
    lines = ["class,confidence,tp,fp,fn,precision,recall"]
    for cls in DetectionClass:
        for p in pr_points(scored[cls], gt_counts[cls]):
            lines.append(f"{cls.name},{p.confidence:.6f},{p.tp},{p.fp},{p.fn},"
                         f"{p.precision:.6f},{p.recall:.6f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Dataset I/O
# --------------------------------------------------------------------------

def list_dataset_images(dataset_dir) -> dict:
    """Map image stems to paths under <dataset_dir>/images."""
    images_dir = Path(dataset_dir) / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"{images_dir}: no images directory")
    stems = {}
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            stems[path.stem] = path
    return stems


def load_ground_truth(dataset_dir) -> dict:
    """Read all labels, denormalized against each image's true size."""
    dataset_dir = Path(dataset_dir)
    images = list_dataset_images(dataset_dir)
    ground_truth = {}
    errors = []
    for stem, image_path in images.items():
        label_path = dataset_dir / "labels" / f"{stem}.txt"
        if not label_path.exists():
            ground_truth[stem] = []
            continue
        frame = cv2.imread(str(image_path))
        if frame is None:
            errors.append(f"{image_path}: unreadable image")
            continue
        h, w = frame.shape[:2]
        try:
            ground_truth[stem] = parse_labels(label_path.read_text(), w, h)
        except ValueError as exc:
            errors.append(f"{label_path}: {exc}")
    if errors:
        raise ValueError("label parse errors:\n" + "\n".join(errors))
    return ground_truth


def parse_predictions_file(text: str) -> dict:
    """Parse ``stem class confidence x1 y1 x2 y2`` lines, grouped by stem."""
    per_stem: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        stem, cls_token, conf = parts[0], parts[1], float(parts[2])
        x1, y1, x2, y2 = (float(p) for p in parts[3:])
        if cls_token.isdigit():
            label = DetectionClass(int(cls_token))
        else:
            label = DetectionClass.from_name(cls_token)
        per_stem.setdefault(stem, []).append(
            Detection(BoundingBox(x1, y1, x2, y2), label, conf))
    return per_stem


def format_predictions(per_stem: dict) -> str:
    lines = []
    for stem in sorted(per_stem):
        for d in per_stem[stem]:
            lines.append(f"{stem} {d.label.name} {d.confidence:.6f} "
                         f"{d.box.x1:.2f} {d.box.y1:.2f} {d.box.x2:.2f} {d.box.y2:.2f}")
    return "\n".join(lines) + ("\n" if lines else "")


def train_test_split(stems, ratio=(8, 2), seed: int = 0):
    """Deterministic seeded split of stems into train/test lists."""
    a, b = ratio
    if a <= 0 or b <= 0:
        raise ValueError("split ratio parts must be positive")
    pool = sorted(stems)
    random.Random(seed).shuffle(pool)
    n_train = len(pool) * a // (a + b)
    return sorted(pool[:n_train]), sorted(pool[n_train:])


# --------------------------------------------------------------------------
# Pair-verification protocol
# --------------------------------------------------------------------------

def _threshold_candidates(distances) -> list[float]:
    unique = sorted(set(distances))
    if not unique:
        return [0.0]
    mids = [(unique[i] + unique[i + 1]) / 2 for i in range(len(unique) - 1)]
    return [unique[0] - 1.0, *mids, unique[-1] + 1.0]


def _pair_accuracy(distances, labels, threshold) -> float:
    hits = sum((d <= threshold) == bool(label)
               for d, label in zip(distances, labels))
    return hits / len(distances)


def verification_from_distances(distances, labels, folds: int = 10) -> VerificationReport:
    """K-fold accuracy of threshold classification on precomputed distances."""
    n = len(distances)
    if n == 0 or n % folds != 0:
        raise ValueError(f"pair count {n} must be a positive multiple of {folds}")
    fold_size = n // folds
    distances = list(distances)
    labels = [bool(label) for label in labels]
    accuracies = []
    thresholds = []
    for f in range(folds):
        lo, hi = f * fold_size, (f + 1) * fold_size
        test_d, test_l = distances[lo:hi], labels[lo:hi]
        train_d = distances[:lo] + distances[hi:]
        train_l = labels[:lo] + labels[hi:]
        if len(set(test_l)) < 2:
            raise ValueError(f"fold {f} holds a single class; protocol undefined")
        best_t = None
        best_acc = -1.0
        for t in _threshold_candidates(train_d):
            acc = _pair_accuracy(train_d, train_l, t)
            if acc > best_acc:
                best_acc, best_t = acc, t
        accuracies.append(_pair_accuracy(test_d, test_l, best_t))
        thresholds.append(best_t)
    return VerificationReport(
        fold_accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=float(np.std(accuracies)),
        fold_thresholds=thresholds,
    )


def verification_protocol(pairs, embedder, folds: int = 10) -> VerificationReport:
    """Run the k-fold pair protocol over (chip_a, chip_b, same?) triples."""
    embed = embedder.embed if hasattr(embedder, "embed") else embedder
    distances = []
    labels = []
    for chip_a, chip_b, same in pairs:
        distances.append(euclidean_distance(embed(chip_a), embed(chip_b)))
        labels.append(bool(same))
    return verification_from_distances(distances, labels, folds)
