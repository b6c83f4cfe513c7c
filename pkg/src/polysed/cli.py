"""Command-line pipeline: synth | extract | augment | train | detect | eval.

Every command is deterministic given (config, seed, inputs). Diagnostics
go to stderr via logging (level from POLYSED_LOG: debug|info|warn); data
goes to files. Exit code 0 means no errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .augment import augment_dataset
from .config import RunConfig, load_config
from .detection import roll_to_events, threshold_outputs
from .errors import PolysedError
from .estimator import LogMelExtractor
from .evaluation import evaluate_contexts
from .features import apply_normalizer
from .network import predict_posteriors
from .sequences import EventAnnotation, annotations_to_roll
from .synthgen import generate_dataset
from .training import cross_validate

logger = logging.getLogger(__name__)


def _frame_hop(cfg: RunConfig) -> float:
    return cfg.frame_len_s * (1.0 - cfg.overlap)


def _assign_folds(recording_ids, contexts, n_folds: int) -> dict:
    """Round-robin folds within each context so every fold sees each context."""
    by_context: dict[str, list[str]] = {}
    for rec in sorted(recording_ids):
        by_context.setdefault(contexts[rec], []).append(rec)
    fold_map = {}
    for ctx in sorted(by_context):
        for idx, rec in enumerate(by_context[ctx]):
            fold_map[rec] = idx % n_folds
    return fold_map


def cmd_synth(cfg: RunConfig) -> int:
    """Generate the synthetic corpus: WAVs, annotations, class map, folds."""
    spec = cfg.synth_spec()
    clips, events = generate_dataset(spec)
    audio_dir = cfg.path("audio_dir")
    audio_dir.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        fileio.write_wav(audio_dir / f"{clip.recording_id}.wav", clip.samples, spec.sample_rate)
    class_names = [c.name for c in spec.class_defs]
    contexts = {clip.recording_id: clip.context_id for clip in clips}
    fileio.write_class_map(cfg.path("class_map_file"), class_names)
    fileio.write_annotations(cfg.path("annotations_file"), events, class_names, contexts)
    fileio.write_fold_map(
        cfg.path("folds_file"), _assign_folds(contexts, contexts, cfg.n_folds)
    )
    logger.info(
        "wrote %d recordings (%d events) to %s", len(clips), len(events), audio_dir
    )
    return 0


def _extract_one(args):
    wav_path, feature_path, cfg_dict = args
    cfg = RunConfig(**cfg_dict)
    extractor = LogMelExtractor(
        sample_rate=cfg.sample_rate,
        n_bands=cfg.n_bands,
        frame_len_s=cfg.frame_len_s,
        overlap=cfg.overlap,
    ).fit()
    recording_id = Path(wav_path).stem
    context_id = recording_id.split("_")[0]
    clip = fileio.read_wav(wav_path, context_id=context_id, recording_id=recording_id)
    spec = extractor.transform([clip])[0]
    fileio.save_features(feature_path, spec)
    return recording_id, spec.n_frames


def cmd_extract(cfg: RunConfig) -> int:
    """Extract unnormalized log-mel features for every WAV in audio_dir.

    Band statistics are fold-dependent and therefore fitted during
    training, not here.
    """
    audio_dir = cfg.path("audio_dir")
    wavs = sorted(audio_dir.glob("*.wav"))
    if not wavs:
        logger.error("no recordings found in %s", audio_dir)
        return 1
    features_dir = cfg.path("features_dir")
    features_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (str(wav), str(features_dir / f"{wav.stem}.feat"), cfg.snapshot())
        for wav in wavs
    ]
    failures = 0
    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {pool.submit(_extract_one, t): t[0] for t in tasks}
            for future in concurrent.futures.as_completed(futures):
                try:
                    rec, n_frames = future.result()
                    logger.info("%s: %d frames", rec, n_frames)
                except Exception as exc:
                    failures += 1
                    logger.error("%s: %s", futures[future], exc)
    else:
        for task in tasks:
            try:
                rec, n_frames = _extract_one(task)
                logger.info("%s: %d frames", rec, n_frames)
            except Exception as exc:
                failures += 1
                logger.error("%s: %s", task[0], exc)
    if failures:
        logger.error("%d of %d recordings failed", failures, len(tasks))
        return 1
    return 0


def _load_pairs(cfg: RunConfig, class_names):
    """Feature files plus frame-aligned truth rolls for every recording."""
    features_dir = cfg.path("features_dir")
    feature_files = sorted(features_dir.glob("*.feat"))
    if not feature_files:
        raise PolysedError(f"no feature files in {features_dir}")
    events, contexts = fileio.read_annotations(cfg.path("annotations_file"), class_names)
    by_recording: dict[str, list] = {}
    for ev in events:
        by_recording.setdefault(ev.recording_id, []).append(ev)
    pairs = []
    for path in feature_files:
        spec = fileio.load_features(path)
        roll = annotations_to_roll(
            by_recording.get(spec.recording_id, []),
            spec.n_frames,
            spec.frame_hop_s,
            cfg.frame_len_s,
            len(class_names),
        )
        pairs.append((spec, roll))
    return pairs, contexts


def cmd_augment(cfg: RunConfig) -> int:
    """Materialize the augmented features and their annotations on disk."""
    class_names = fileio.read_class_map(cfg.path("class_map_file"))
    pairs, _ = _load_pairs(cfg, class_names)
    augmented = augment_dataset(pairs, cfg.augmentation_plan())
    out_dir = cfg.path("features_dir").parent / "features_augmented"
    out_dir.mkdir(parents=True, exist_ok=True)
    all_events = []
    contexts = {}
    for spec, roll in augmented:
        fileio.save_features(out_dir / f"{spec.recording_id}.feat", spec)
        contexts[spec.recording_id] = spec.context_id
        for ev in roll_to_events(roll, spec.frame_hop_s, cfg.frame_len_s, spec.recording_id):
            all_events.append(
                EventAnnotation(
                    onset_s=ev.onset_s,
                    offset_s=ev.offset_s,
                    class_id=ev.class_id,
                    recording_id=ev.recording_id,
                )
            )
    fileio.write_annotations(out_dir / "annotations.csv", all_events, class_names, contexts)
    logger.info("wrote %d augmented recordings to %s", len(augmented), out_dir)
    return 0


def cmd_train(cfg: RunConfig, folds=None) -> int:
    """Cross-validated training; one model container and log per fold."""
    class_names = fileio.read_class_map(cfg.path("class_map_file"))
    folds_path = cfg.path("folds_file")
    if not folds_path.exists():
        raise PolysedError(f"fold assignment file missing: {folds_path}")
    fold_map = fileio.read_fold_map(folds_path)
    pairs, _ = _load_pairs(cfg, class_names)
    results = cross_validate(
        pairs, fold_map, cfg.train_config(), folds=folds, class_names=class_names
    )
    model_dir = cfg.path("model_dir")
    model_dir.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.snapshot()
    reports = []
    for result in results:
        fileio.save_model(
            model_dir / f"fold{result.fold_id}.model", result.network, snapshot
        )
        for restart, record in enumerate(result.restart_records):
            fileio.write_train_log(
                model_dir / f"fold{result.fold_id}_restart{restart}.log", record
            )
        fileio.write_report_csv(
            model_dir / f"fold{result.fold_id}_report.csv", result.report
        )
        reports.append(result.report)
        logger.info(
            "fold %d: test F1 frame=%.4f block=%.4f",
            result.fold_id,
            result.report.overall_f1_avgframe,
            result.report.overall_f1_1sec,
        )
    mean_frame = float(np.mean([r.overall_f1_avgframe for r in reports]))
    mean_block = float(np.mean([r.overall_f1_1sec for r in reports]))
    logger.info("cross-validation mean: frame=%.4f block=%.4f", mean_frame, mean_block)
    return 0


def cmd_detect(cfg: RunConfig) -> int:
    """Apply a trained model to feature files and write the detection CSV."""
    model_file = cfg.model_file
    if model_file is None:
        model_file = cfg.path("model_dir") / "fold0.model"
    net, _ = fileio.load_model(model_file)
    if net.normalizer is None or net.class_names is None:
        raise PolysedError(f"{model_file}: model lacks a normalizer or class map")
    features_dir = cfg.path("features_dir")
    feature_files = sorted(features_dir.glob("*.feat"))
    events = []
    for path in feature_files:
        spec = fileio.load_features(path)
        if spec.n_bands != net.n_bands:
            raise PolysedError(
                f"{path}: {spec.n_bands} bands, model expects {net.n_bands}"
            )
        normalized = apply_normalizer(spec, net.normalizer)
        posteriors = predict_posteriors(
            net, normalized.values, chunk_len=cfg.test_sequence_length
        )
        roll = threshold_outputs(posteriors, cfg.threshold)
        events.extend(
            roll_to_events(roll, spec.frame_hop_s, cfg.frame_len_s, spec.recording_id)
        )
    detections_path = cfg.path("detections_file")
    detections_path.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_detections(detections_path, events, net.class_names)
    logger.info("wrote %d events for %d recordings", len(events), len(feature_files))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    """Score a detection CSV against the truth annotations."""
    class_names = fileio.read_class_map(cfg.path("class_map_file"))
    pairs, _ = _load_pairs(cfg, class_names)
    detections = fileio.read_detections(cfg.path("detections_file"), class_names)
    known = {spec.recording_id for spec, _ in pairs}
    strangers = sorted({d.recording_id for d in detections} - known)
    if strangers:
        raise PolysedError(f"detections reference unknown recordings: {strangers}")
    by_recording: dict[str, list] = {}
    for det in detections:
        by_recording.setdefault(det.recording_id, []).append(det)
    items = []
    for spec, truth in pairs:
        pred = annotations_to_roll(
            by_recording.get(spec.recording_id, []),
            spec.n_frames,
            spec.frame_hop_s,
            cfg.frame_len_s,
            len(class_names),
        )
        items.append((pred, truth, spec.context_id))
    report = evaluate_contexts(
        items, frame_hop_s=_frame_hop(cfg), framewise_average=cfg.framewise_average
    )
    prefix = cfg.path("report_prefix")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_report_csv(Path(f"{prefix}.csv"), report)
    fileio.write_report_table(Path(f"{prefix}.txt"), report)
    logger.info(
        "overall F1: frame=%.4f block=%.4f",
        report.overall_f1_avgframe,
        report.overall_f1_1sec,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polysed",
        description="Polyphonic sound event detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset"),
        ("extract", "extract log-mel features from WAV files"),
        ("augment", "materialize augmented features"),
        ("train", "run cross-validated training"),
        ("detect", "run detection with a trained model"),
        ("eval", "score detections against annotations"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=str, default=None, help="key=value config file")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--jobs", type=int, default=None, help="worker process cap")
        cmd.add_argument("--folds", type=str, default=None, help="comma list of fold ids")
        cmd.add_argument("--restarts", type=int, default=None)
        cmd.add_argument("--augment", choices=["on", "off"], default=None)
        cmd.add_argument("--threshold", type=float, default=None)
        cmd.add_argument("--out", type=str, default=None, help="output directory")
        cmd.add_argument("--model", type=str, default=None, help="model file (detect)")
    return parser


def main(argv=None) -> int:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        os.environ.get("POLYSED_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "jobs": args.jobs,
        "n_restarts": args.restarts,
        "augment": args.augment,
        "threshold": args.threshold,
        "out_dir": args.out,
        "model_file": args.model,
    }
    try:
        cfg = load_config(args.config, overrides)
        folds = None
        if args.folds is not None:
            folds = [int(part) for part in args.folds.split(",") if part.strip()]
        handlers = {
            "synth": cmd_synth,
            "extract": cmd_extract,
            "augment": cmd_augment,
            "detect": cmd_detect,
            "eval": cmd_eval,
        }
        if args.command == "train":
            return cmd_train(cfg, folds=folds)
        return handlers[args.command](cfg)
    except (PolysedError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        logger.debug("details", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
