"""Turn network posteriors into binary rolls and event lists.

No post-processing or smoothing is applied between the network outputs and
the thresholded roll; the mapping is stateless per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequences import TargetRoll
from .validation import check_label


@dataclass
class DetectedEvent:
    """A detected event with frame-grid-aligned onset/offset times."""

    class_id: int
    onset_s: float
    offset_s: float
    recording_id: str = ""

    def __post_init__(self):
        self.class_id = int(self.class_id)
        self.onset_s = float(self.onset_s)
        self.offset_s = float(self.offset_s)
        if self.onset_s >= self.offset_s:
            raise ValueError("onset must precede offset")
        check_label(self.recording_id, "recording_id")


def threshold_outputs(y: np.ndarray, threshold: float = 0.5) -> TargetRoll:
    """Mark class k active in frame t when y[t, k] >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected (time, classes) outputs, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("outputs must lie in [0, 1]")
    return TargetRoll(values=(arr >= threshold).astype(np.uint8))


def roll_to_events(
    roll: TargetRoll,
    frame_hop_s: float,
    frame_len_s: float,
    recording_id: str = "",
) -> list[DetectedEvent]:
    """One event per maximal run of consecutive active frames per class.

    A run of frames [first..last] maps to the time interval
    [(first+1)*hop, (last+1)*hop): re-rasterizing such an event with the
    frame-overlap activation rule reproduces the run exactly, so
    roll -> events -> roll is the identity for runs of two or more frames
    (single-frame runs cannot arise from any event when frames overlap;
    they are emitted as [first*hop, (first+1)*hop) best-effort).
    """
    if frame_hop_s <= 0 or frame_len_s <= 0:
        raise ValueError("frame timing must be positive")
    events: list[DetectedEvent] = []
    values = roll.values
    for k in range(roll.n_classes):
        column = values[:, k]
        if not column.any():
            continue
        padded = np.concatenate([[0], column, [0]])
        steps = np.diff(padded.astype(np.int8))
        firsts = np.flatnonzero(steps == 1)
        lasts = np.flatnonzero(steps == -1) - 1
        for first, last in zip(firsts, lasts):
            if last > first:
                onset = (first + 1) * frame_hop_s
            else:
                onset = first * frame_hop_s
            events.append(
                DetectedEvent(
                    class_id=k,
                    onset_s=onset,
                    offset_s=(last + 1) * frame_hop_s,
                    recording_id=recording_id,
                )
            )
    events.sort(key=lambda e: (e.onset_s, e.class_id))
    return events
