"""Frame-aligned targets, fixed-length sequence splitting, and minibatching."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .features import MelSpectrogram
from .validation import as_binary_matrix, as_float_matrix, check_aligned_frames, check_label

# Sub-nanosecond slack for frame/event boundary comparisons: times that are
# mathematically equal may differ by a few float ulps depending on how they
# were computed, and a strict inequality must not flip on that noise.
TIME_EPS = 1e-9


@dataclass
class EventAnnotation:
    """One labelled sound event on a recording's timeline."""

    onset_s: float
    offset_s: float
    class_id: int
    recording_id: str = ""

    def __post_init__(self):
        self.onset_s = float(self.onset_s)
        self.offset_s = float(self.offset_s)
        self.class_id = int(self.class_id)
        if not 0.0 <= self.onset_s < self.offset_s:
            raise ValueError(
                f"need 0 <= onset < offset, got [{self.onset_s}, {self.offset_s})"
            )
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")
        check_label(self.recording_id, "recording_id")


@dataclass
class TargetRoll:
    """Binary activity matrix, frames x classes."""

    values: np.ndarray

    def __post_init__(self):
        self.values = as_binary_matrix(self.values, "target roll")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass
class TrainingSequence:
    """A fixed-length (features, targets) pair cut from one recording."""

    features: np.ndarray
    targets: np.ndarray
    source_id: str = ""
    start: int = 0
    augmented: bool = False

    def __post_init__(self):
        self.features = as_float_matrix(self.features, "sequence features")
        self.targets = as_binary_matrix(self.targets, "sequence targets")
        check_aligned_frames(self.features, self.targets)

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class SequenceBatch:
    """Sequences of one shared length grouped for a single gradient step."""

    sequences: list[TrainingSequence] = field(repr=False)

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("a batch needs at least one sequence")
        lengths = {s.length for s in self.sequences}
        if len(lengths) != 1:
            raise ValueError(f"batch mixes sequence lengths {sorted(lengths)}")

    @property
    def batch_size(self) -> int:
        return len(self.sequences)

    @property
    def length(self) -> int:
        return self.sequences[0].length

    @cached_property
    def features(self) -> np.ndarray:
        return np.stack([s.features for s in self.sequences])

    @cached_property
    def targets(self) -> np.ndarray:
        return np.stack([s.targets for s in self.sequences])


def annotations_to_roll(
    events,
    n_frames: int,
    frame_hop_s: float,
    frame_len_s: float,
    n_classes: int,
) -> TargetRoll:
    """Mark class k active in frame t when an event of class k overlaps
    the frame's span [t*hop, t*hop + frame_len)."""
    if n_frames < 1 or n_classes < 1:
        raise ValueError("n_frames and n_classes must be >= 1")
    values = np.zeros((n_frames, n_classes), dtype=np.uint8)
    starts = np.arange(n_frames) * frame_hop_s
    for ev in events:
        if ev.class_id >= n_classes:
            raise ValueError(
                f"class_id {ev.class_id} out of range for {n_classes} classes"
            )
        active = (starts < ev.offset_s - TIME_EPS) & (
            starts + frame_len_s > ev.onset_s + TIME_EPS
        )
        values[active, ev.class_id] = 1
    return TargetRoll(values=values)


def split_multiscale(
    spec: MelSpectrogram,
    roll: TargetRoll,
    lengths,
    augmented: bool = False,
) -> list[TrainingSequence]:
    """Cut a recording into non-overlapping sequences at each length.

    Each scale starts at frame 0; a trailing remainder shorter than the
    scale is dropped. The scales' sequences are concatenated in ascending
    length order.
    """
    if spec.n_frames != roll.n_frames:
        raise ValueError("spectrogram and roll frame counts differ")
    lengths = sorted(set(int(t) for t in lengths))
    if not lengths or lengths[0] < 1:
        raise ValueError("lengths must be a nonempty set of positive counts")
    out: list[TrainingSequence] = []
    for t_len in lengths:
        for i in range(spec.n_frames // t_len):
            start = i * t_len
            out.append(
                TrainingSequence(
                    features=spec.values[start : start + t_len],
                    targets=roll.values[start : start + t_len],
                    source_id=spec.recording_id,
                    start=start,
                    augmented=augmented,
                )
            )
    return out


def split_for_inference(values: np.ndarray, length: int) -> list[np.ndarray]:
    """Cut a frame matrix into `length`-frame chunks, keeping the remainder
    as a shorter final chunk so every frame is covered."""
    if length < 1:
        raise ValueError("length must be >= 1")
    n = values.shape[0]
    chunks = [values[i * length : (i + 1) * length] for i in range(n // length)]
    if n % length:
        chunks.append(values[n - n % length :])
    return chunks


def make_minibatches(sequences, batch_size: int, rng_seed: int) -> list[SequenceBatch]:
    """Shuffle sequences into batches of a shared length.

    Sequences are grouped by length, each group is shuffled with the seeded
    generator and chunked (final partial batch kept), and the resulting
    batch order is itself shuffled. Deterministic for a fixed seed and
    input order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sequences = list(sequences)
    rng = np.random.default_rng(rng_seed)
    groups: dict[int, list[TrainingSequence]] = {}
    for seq in sequences:
        groups.setdefault(seq.length, []).append(seq)

    batches: list[SequenceBatch] = []
    for t_len in sorted(groups):
        group = groups[t_len]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        for i in range(0, len(shuffled), batch_size):
            batches.append(SequenceBatch(sequences=shuffled[i : i + batch_size]))
    final_order = rng.permutation(len(batches))
    return [batches[i] for i in final_order]
