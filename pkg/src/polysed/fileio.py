"""On-disk formats: WAV audio, feature files, model containers, CSVs.

Feature files ("POLYSED-FEAT v1") are a single ASCII header line followed
by the raw row-major little-endian float64 values; model files
("POLYSED-MODEL v1") add a JSON directory of tensors before the binary
payload. Both round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .detection import DetectedEvent
from .features import AudioClip, BandNormalizer, MelSpectrogram
from .network import (
    BlstmNetwork,
    LstmDirectionParams,
    LstmLayerParams,
    OutputLayerParams,
    param_items,
)
from .sequences import EventAnnotation
from .training import TrainRecord
from .validation import check_label

FEAT_MAGIC = "POLYSED-FEAT v1"
MODEL_MAGIC = "POLYSED-MODEL v1"


def read_wav(path, context_id: str = "", recording_id: str = "") -> AudioClip:
    """Read a 16/24/32-bit PCM or float WAV; stereo is averaged to mono."""
    sample_rate, data = wavfile.read(path)
    samples = np.asarray(data, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        samples = samples / float(np.iinfo(data.dtype).max)
    return AudioClip(
        samples=samples,
        sample_rate=float(sample_rate),
        context_id=context_id,
        recording_id=recording_id,
    )


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM, clipping to [-1, 1]."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, int(sample_rate), (clipped * 32767.0).astype(np.int16))


def save_features(path, spec: MelSpectrogram) -> None:
    header = (
        f"{FEAT_MAGIC},{spec.n_frames},{spec.n_bands},{float(spec.frame_hop_s)!r},"
        f"{spec.context_id},{spec.recording_id}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(spec.values, dtype="<f8").tobytes())


def load_features(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").rstrip("\n")
        payload = fh.read()
    parts = header.split(",")
    if len(parts) != 6 or parts[0] != FEAT_MAGIC:
        raise ValueError(f"{path}: not a {FEAT_MAGIC} file")
    n_frames, n_bands = int(parts[1]), int(parts[2])
    frame_hop_s = float(parts[3])
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != n_frames * n_bands:
        raise ValueError(
            f"{path}: expected {n_frames * n_bands} values, found {values.size}"
        )
    return MelSpectrogram(
        values=values.reshape(n_frames, n_bands).copy(),
        frame_hop_s=frame_hop_s,
        frame_len_s=2.0 * frame_hop_s,
        context_id=parts[4],
        recording_id=parts[5],
    )


def save_model(path, net: BlstmNetwork, config_snapshot: dict | None = None) -> None:
    """Write the architecture, every tensor, the normalizer and class map."""
    tensors = list(param_items(net))
    if net.normalizer is not None:
        tensors.append(("normalizer.means", net.normalizer.means))
        tensors.append(("normalizer.std_devs", net.normalizer.std_devs))
    header = {
        "n_bands": net.n_bands,
        "cells_per_layer": list(net.cells_per_layer),
        "n_classes": net.n_classes,
        "class_names": net.class_names,
        "config": config_snapshot or {},
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(f"{MODEL_MAGIC}\n{len(blob)}\n".encode("ascii"))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> tuple[BlstmNetwork, dict]:
    """Read a model container back; inverse of save_model, bit-exact."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
        header_len = int(fh.readline().decode("ascii"))
        header = json.loads(fh.read(header_len).decode("ascii"))
        arrays = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated tensor {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    n_bands = int(header["n_bands"])
    cells = tuple(int(c) for c in header["cells_per_layer"])
    layers = []
    for li in range(len(cells)):
        directions = {}
        for dname in ("fwd", "bwd"):
            fields = {
                f: arrays[f"layer{li}.{dname}.{f}"]
                for f in (
                    "W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc",
                    "W_ho", "w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o",
                )
            }
            directions[dname] = LstmDirectionParams(**fields)
        layers.append(LstmLayerParams(**directions))
    output = OutputLayerParams(W_hy=arrays["output.W_hy"], b_y=arrays["output.b_y"])
    normalizer = None
    if "normalizer.means" in arrays:
        normalizer = BandNormalizer(
            means=arrays["normalizer.means"], std_devs=arrays["normalizer.std_devs"]
        )
    net = BlstmNetwork(
        layers=layers,
        output=output,
        n_bands=n_bands,
        cells_per_layer=cells,
        normalizer=normalizer,
        class_names=header.get("class_names"),
    )
    return net, header.get("config", {})


def write_class_map(path, class_names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class_name", "class_id"])
        for idx, name in enumerate(class_names):
            writer.writerow([check_label(name, "class_name"), idx])


def read_class_map(path) -> list[str]:
    """Class names ordered by id; ids must be contiguous from 0."""
    entries = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries[int(row["class_id"])] = row["class_name"]
    if not entries or sorted(entries) != list(range(len(entries))):
        raise ValueError(f"{path}: class ids must be contiguous from 0")
    return [entries[i] for i in range(len(entries))]


def write_annotations(path, events, class_names, contexts: dict) -> None:
    """CSV of events; `contexts` maps recording_id to context_id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "context_id", "onset_s", "offset_s", "class_name"])
        for ev in events:
            writer.writerow(
                [
                    ev.recording_id,
                    contexts[ev.recording_id],
                    repr(float(ev.onset_s)),
                    repr(float(ev.offset_s)),
                    class_names[ev.class_id],
                ]
            )


def read_annotations(path, class_names) -> tuple[list[EventAnnotation], dict]:
    """Events plus the recording_id -> context_id mapping."""
    index = {name: i for i, name in enumerate(class_names)}
    events = []
    contexts = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            name = row["class_name"]
            if name not in index:
                raise ValueError(f"{path}: unknown class {name!r}")
            events.append(
                EventAnnotation(
                    onset_s=float(row["onset_s"]),
                    offset_s=float(row["offset_s"]),
                    class_id=index[name],
                    recording_id=row["recording_id"],
                )
            )
            contexts[row["recording_id"]] = row["context_id"]
    return events, contexts


def write_fold_map(path, fold_map: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "fold_id"])
        for recording_id in sorted(fold_map):
            writer.writerow([recording_id, fold_map[recording_id]])


def read_fold_map(path) -> dict:
    fold_map = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fold_map[row["recording_id"]] = int(row["fold_id"])
    if not fold_map:
        raise ValueError(f"{path}: empty fold assignment")
    return fold_map


def write_detections(path, events, class_names) -> None:
    """Detection CSV sorted by (recording, onset, class)."""
    ordered = sorted(events, key=lambda e: (e.recording_id, e.onset_s, e.class_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "class_name", "onset_s", "offset_s"])
        for ev in ordered:
            writer.writerow(
                [ev.recording_id, class_names[ev.class_id], repr(float(ev.onset_s)), repr(float(ev.offset_s))]
            )


def read_detections(path, class_names) -> list[DetectedEvent]:
    index = {name: i for i, name in enumerate(class_names)}
    events = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.append(
                DetectedEvent(
                    class_id=index[row["class_name"]],
                    onset_s=float(row["onset_s"]),
                    offset_s=float(row["offset_s"]),
                    recording_id=row["recording_id"],
                )
            )
    return events


def write_report_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["context", "f1_avgframe", "f1_1sec"])
        for ctx in report.contexts:
            writer.writerow([ctx.context_id, repr(float(ctx.f1_avgframe)), repr(float(ctx.f1_1sec))])
        writer.writerow(["average", repr(float(report.overall_f1_avgframe)), repr(float(report.overall_f1_1sec))])


def write_report_table(path, report) -> None:
    """Aligned plain-text table: one row per context plus the average."""
    rows = [(c.context_id, c.f1_avgframe, c.f1_1sec) for c in report.contexts]
    rows.append(("average", report.overall_f1_avgframe, report.overall_f1_1sec))
    width = max(len("context"), *(len(r[0]) for r in rows))
    lines = [f"{'context':<{width}}  F1_frame  F1_1sec"]
    lines.append("-" * len(lines[0]))
    for name, f1_frame, f1_block in rows:
        lines.append(f"{name:<{width}}  {f1_frame:>8.1%}  {f1_block:>7.1%}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_train_log(path, record: TrainRecord) -> None:
    """Per-epoch log: epoch,train_rmse,val_rmse,elapsed_s."""
    lines = ["epoch,train_rmse,val_rmse,elapsed_s"]
    for epoch, (train, val, secs) in enumerate(
        zip(record.train_rmse, record.val_rmse, record.epoch_seconds), start=1
    ):
        lines.append(f"{epoch},{train!r},{val!r},{secs:.3f}")
    lines.append(f"# best_epoch={record.best_epoch} stop={record.stop_reason}")
    Path(path).write_text("\n".join(lines) + "\n")
