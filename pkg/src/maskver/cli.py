"""Operator command line: detect, enroll, verify, evaluate, split, serve.

Exit codes: 0 ok, 2 input error, 3 enrollment rejection, 4 environment
error. Data goes to stdout, diagnostics to stderr; every data-producing
command supports --json.
"""

from __future__ import annotations

import json
import socket
import sys
from pathlib import Path

import click
import cv2
import numpy as np

from maskver.config import (
    AppConfig,
    DETECTOR_CANDIDATES,
    find_default_model,
    load_config,
)
from maskver.detector import DetectorConfig, crop_face, detect_faces
from maskver.evaluation import (
    evaluate_detections,
    load_ground_truth,
    list_dataset_images,
    parse_predictions_file,
    pr_curves_csv,
    train_test_split,
)
from maskver.gallery import Gallery
from maskver.inference import ModelError, load_model
from maskver.service import create_app
from maskver.validation import check_chip_batch

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ENROLL = 3
EXIT_ENV = 4


def fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def read_frame(path: str) -> np.ndarray:
    frame = cv2.imread(path)
    if frame is None:
        fail(EXIT_INPUT, f"cannot read image '{path}'")
    return cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)


def build_config(verbose: bool, config_file, **overrides) -> AppConfig:
    try:
        config = load_config(overrides, config_file)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        fail(EXIT_INPUT, f"bad configuration: {exc}")
    if verbose:
        click.echo(config.echo(), err=True)
    return config


def resolve_detector(config: AppConfig):
    name = config.detector_model or find_default_model(config.model_dir,
                                                       DETECTOR_CANDIDATES)
    if name is None:
        fail(EXIT_ENV, "no detector model configured "
                       "(--model or MASKVER_MODEL_DIR with detector.onnx "
                       "or detector.stub.json)")
    try:
        return load_model(name)
    except ModelError as exc:
        fail(EXIT_ENV, str(exc))


def resolve_embedder(config: AppConfig):
    try:
        return load_model(config.embedder_model)
    except ModelError as exc:
        fail(EXIT_ENV, str(exc))


def detector_config(config: AppConfig) -> DetectorConfig:
    return DetectorConfig(confidence_threshold=config.conf_threshold,
                          nms_iou_threshold=config.nms_iou_threshold)


def embed_chip(embedder, chip):
    batch = check_chip_batch([chip], embedder.input_specs[0].shape[-1])
    outputs = embedder.run({embedder.input_specs[0].name: batch})
    return outputs[embedder.output_specs[0].name][0]


def load_gallery_file(path: str) -> Gallery:
    if Path(path).exists():
        try:
            return Gallery.load(path)
        except Exception as exc:
            fail(EXIT_INPUT, str(exc))
    return Gallery()


common_options = [
    click.option("--model", "detector_model", default=None,
                 help="Detector model file (.onnx or .stub.json)."),
    click.option("--model-dir", default=None,
                 help="Directory searched for default model files."),
    click.option("--embedder", "embedder_model", default=None,
                 help="Embedder model (.onnx/.refnet path or 'tiny-embedder')."),
    click.option("--conf", "conf_threshold", type=float, default=None,
                 help="Detector confidence threshold."),
    click.option("--nms-iou", "nms_iou_threshold", type=float, default=None,
                 help="NMS IoU threshold."),
    click.option("--config", "config_file", default=None,
                 help="JSON config file (same keys as MASKVER_* env vars)."),
    click.option("--verbose", is_flag=True, help="Echo the resolved config."),
]


def with_common_options(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Mask-robust face detection and identity verification toolkit."""


@main.command()
@click.argument("image", type=str)
@click.option("--json", "as_json", is_flag=True, help="Emit JSON to stdout.")
@with_common_options
def detect(image, as_json, verbose, config_file, **overrides):
    """Detect faces (mask / no_mask) in an image file."""
    config = build_config(verbose, config_file, **overrides)
    if not Path(image).exists():
        fail(EXIT_INPUT, f"no such file '{image}'")
    detector = resolve_detector(config)
    frame = read_frame(image)
    detections = detect_faces(frame, detector, detector_config(config))
    payload = [d.to_json() for d in detections]
    if as_json:
        click.echo(json.dumps(payload))
    else:
        for d in payload:
            box = d["box"]
            click.echo(f"{d['class']:8s} conf={d['confidence']:.3f} "
                       f"box=({box['x1']:.1f}, {box['y1']:.1f}, "
                       f"{box['x2']:.1f}, {box['y2']:.1f})")
        if not payload:
            click.echo("no faces detected")


@main.command()
@click.argument("gallery_path", metavar="GALLERY", type=str)
@click.argument("student_id", type=str)
@click.argument("name", type=str)
@click.argument("images", nargs=-1, required=True, type=str)
@click.option("--json", "as_json", is_flag=True)
@with_common_options
def enroll(gallery_path, student_id, name, images, as_json, verbose,
           config_file, **overrides):
    """Enroll IMAGES of one student into a gallery file."""
    config = build_config(verbose, config_file, **overrides)
    if not student_id.strip():
        fail(EXIT_INPUT, "student id must not be empty")
    detector = resolve_detector(config)
    embedder = resolve_embedder(config)
    gallery = load_gallery_file(gallery_path)
    chip_size = embedder.input_specs[0].shape[-1]
    for image in images:
        if not Path(image).exists():
            fail(EXIT_INPUT, f"no such file '{image}'")
        frame = read_frame(image)
        detections = detect_faces(frame, detector, detector_config(config))
        if len(detections) != 1:
            fail(EXIT_ENROLL,
                 f"'{image}': enrollment requires exactly one face, "
                 f"found {len(detections)}")
        chip = crop_face(frame, detections[0], out_size=chip_size)
        gallery.enroll(student_id.strip(), name,
                       embed_chip(embedder, chip))
    gallery.save(gallery_path)
    record = gallery.get(student_id.strip())
    payload = {"student_id": record.student_id, "name": record.name,
               "embeddings_count": len(record.embeddings)}
    if as_json:
        click.echo(json.dumps(payload))
    else:
        click.echo(f"enrolled {payload['student_id']} "
                   f"({payload['embeddings_count']} embeddings)")


@main.command()
@click.argument("gallery_path", metavar="GALLERY", type=str)
@click.argument("image", type=str)
@click.option("--threshold", type=float, default=None,
              help="Match distance threshold (default 0.6).")
@click.option("--json", "as_json", is_flag=True)
@with_common_options
def verify(gallery_path, image, threshold, as_json, verbose,
           config_file, **overrides):
    """Verify the faces in IMAGE against a gallery file."""
    config = build_config(verbose, config_file, **overrides)
    if not Path(image).exists():
        fail(EXIT_INPUT, f"no such file '{image}'")
    threshold = threshold if threshold is not None else config.match_threshold
    if not 0 < threshold <= 2:
        fail(EXIT_INPUT, "threshold must lie in (0, 2]")
    detector = resolve_detector(config)
    embedder = resolve_embedder(config)
    gallery = load_gallery_file(gallery_path)
    frame = read_frame(image)
    chip_size = embedder.input_specs[0].shape[-1]
    faces = []
    for detection in detect_faces(frame, detector, detector_config(config)):
        chip = crop_face(frame, detection, out_size=chip_size)
        result = gallery.match(embed_chip(embedder, chip), threshold=threshold)
        faces.append({"detection": detection.to_json(),
                      "match": result.to_json()})
    payload = {"image": {"width": frame.shape[1], "height": frame.shape[0]},
               "threshold": threshold, "faces": faces}
    if as_json:
        click.echo(json.dumps(payload))
    else:
        if not faces:
            click.echo("no faces detected")
        for entry in faces:
            match = entry["match"]
            shown = "inf" if match["distance"] is None else f"{match['distance']:.4f}"
            click.echo(f"{match['decision']:12s} distance={shown} "
                       f"({entry['detection']['class']})")


@main.command()
@click.argument("dataset_dir", type=str)
@click.option("--iou", "iou_thresh", type=float, default=0.5, show_default=True)
@click.option("--predictions", "predictions_file", default=None,
              help="Score a predictions interchange file instead of a model.")
@click.option("--pr-csv", "pr_csv_path", default=None,
              help="Write PR curve points as CSV to this path.")
@click.option("--report-json", "report_json_path", default=None,
              help="Write the full report JSON to this path.")
@click.option("--json", "as_json", is_flag=True)
@with_common_options
def evaluate(dataset_dir, iou_thresh, predictions_file, pr_csv_path,
             report_json_path, as_json, verbose, config_file, **overrides):
    """Score detections against a labeled dataset at IoU 0.5."""
    config = build_config(verbose, config_file, **overrides)
    try:
        ground_truth = load_ground_truth(dataset_dir)
    except (FileNotFoundError, ValueError) as exc:
        fail(EXIT_INPUT, str(exc))
    if predictions_file:
        if not Path(predictions_file).exists():
            fail(EXIT_INPUT, f"no such file '{predictions_file}'")
        try:
            predictions = parse_predictions_file(
                Path(predictions_file).read_text())
        except ValueError as exc:
            fail(EXIT_INPUT, f"{predictions_file}: {exc}")
    else:
        detector = resolve_detector(config)
        cfg = detector_config(config)
        predictions = {}
        for stem, image_path in list_dataset_images(dataset_dir).items():
            predictions[stem] = detect_faces(read_frame(str(image_path)),
                                             detector, cfg)
    per_image = {stem: (predictions.get(stem, []), gts)
                 for stem, gts in ground_truth.items()}
    report = evaluate_detections(per_image, iou_thresh,
                                 operating_confidence=config.conf_threshold)
    if pr_csv_path:
        Path(pr_csv_path).write_text(pr_curves_csv(per_image, iou_thresh))
    if report_json_path:
        Path(report_json_path).write_text(json.dumps(report.to_json(), indent=2))
    if as_json:
        click.echo(json.dumps(report.to_json()))
    else:
        click.echo(report.to_table())


@main.command()
@click.argument("dataset_dir", type=str)
@click.option("--ratio", default="8:2", show_default=True,
              help="train:test ratio, e.g. 8:2.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Directory for train.txt/test.txt (default: dataset dir).")
@click.option("--json", "as_json", is_flag=True)
def split(dataset_dir, ratio, seed, out_dir, as_json):
    """Deterministically split dataset stems into train/test lists."""
    try:
        a, _, b = ratio.partition(":")
        parts = (int(a), int(b))
    except ValueError:
        fail(EXIT_INPUT, f"bad ratio '{ratio}' (expected like 8:2)")
    try:
        stems = sorted(list_dataset_images(dataset_dir))
    except FileNotFoundError as exc:
        fail(EXIT_INPUT, str(exc))
    try:
        train, test = train_test_split(stems, parts, seed)
    except ValueError as exc:
        fail(EXIT_INPUT, str(exc))
    target = Path(out_dir or dataset_dir)
    target.mkdir(parents=True, exist_ok=True)
    (target / "train.txt").write_text("\n".join(train) + ("\n" if train else ""))
    (target / "test.txt").write_text("\n".join(test) + ("\n" if test else ""))
    payload = {"train": len(train), "test": len(test), "seed": seed,
               "train_file": str(target / "train.txt"),
               "test_file": str(target / "test.txt")}
    if as_json:
        click.echo(json.dumps(payload))
    else:
        click.echo(f"wrote {payload['train']} train / {payload['test']} test "
                   f"stems (seed {seed})")


@main.command()
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8000).")
@click.option("--gallery", "gallery_path", default=None)
@click.option("--console-dir", default=None,
              help="Static console assets to serve under /console.")
@with_common_options
def serve(listen, gallery_path, console_dir, verbose, config_file, **overrides):
    """Run the HTTP authentication service."""
    import uvicorn

    config = build_config(verbose, config_file, listen=listen,
                          gallery_path=gallery_path, console_dir=console_dir,
                          **overrides)
    host, _, port_text = config.listen.partition(":")
    try:
        port = int(port_text or "8000")
    except ValueError:
        fail(EXIT_INPUT, f"bad listen address '{config.listen}'")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host or "127.0.0.1", port))
    except OSError as exc:
        probe.close()
        fail(EXIT_ENV, f"cannot listen on {config.listen}: {exc}")
    finally:
        probe.close()
    if config.console_dir is None and Path("frontend/dist").is_dir():
        config.console_dir = "frontend/dist"
    try:
        app = create_app(config=config)
    except ModelError as exc:
        fail(EXIT_ENV, str(exc))
    click.echo(config.echo(), err=True)
    uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
