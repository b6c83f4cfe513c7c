"""Spectrogram-domain training-set augmentation.

Three transforms operate directly on (log-mel spectrogram, target roll)
pairs: time stretching by linear interpolation, sub-frame time shifting,
and max-pooled mixing of equal-sized blocks within a context. With the
default plan the augmented output holds roughly 16x the original frames.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from .features import MelSpectrogram
from .sequences import TargetRoll

logger = logging.getLogger(__name__)

_AUG_TAG = re.compile(r"_(stretch|shift|mix)")

DEFAULT_STRETCH_FACTORS = (0.7, 0.85, 1.2, 1.5)
DEFAULT_SUBFRAME_SHIFTS = (0.25, 0.5, 0.75)
DEFAULT_MIX_BLOCKS = 20
DEFAULT_MIX_EXPANSION = 9


def is_augmented_id(recording_id: str) -> bool:
    """True when a recording id carries an augmentation transform tag."""
    return _AUG_TAG.search(recording_id) is not None


@dataclass
class AugmentationPlan:
    """Parameters for one pass of dataset expansion."""

    stretch_factors: tuple = DEFAULT_STRETCH_FACTORS
    subframe_shifts: tuple = DEFAULT_SUBFRAME_SHIFTS
    mix_blocks_per_context: int = DEFAULT_MIX_BLOCKS
    mix_expansion: int = DEFAULT_MIX_EXPANSION
    rng_seed: int = 0

    def __post_init__(self):
        self.stretch_factors = tuple(float(f) for f in self.stretch_factors)
        self.subframe_shifts = tuple(float(s) for s in self.subframe_shifts)
        if any(f <= 0 or f == 1.0 for f in self.stretch_factors):
            raise ValueError("stretch factors must be positive and != 1")
        if any(not 0.0 < s < 1.0 for s in self.subframe_shifts):
            raise ValueError("sub-frame shifts must lie in (0, 1)")
        if self.mix_blocks_per_context < 2:
            raise ValueError("need at least 2 mixing blocks per context")
        if self.mix_expansion < 0:
            raise ValueError("mix_expansion must be >= 0")


def _respec(spec: MelSpectrogram, values: np.ndarray, recording_id: str) -> MelSpectrogram:
    return MelSpectrogram(
        values=values,
        frame_hop_s=spec.frame_hop_s,
        frame_len_s=spec.frame_len_s,
        context_id=spec.context_id,
        recording_id=recording_id,
    )


def time_stretch(
    spec: MelSpectrogram, roll: TargetRoll, factor: float
) -> tuple[MelSpectrogram, TargetRoll]:
    """Stretch a spectrogram in time by linear interpolation.

    The output has round(n_frames * factor) frames sampled on an
    endpoint-preserving grid over [0, n_frames - 1]; target rows are copied
    from the nearest input frame. factor == 1 reproduces the input exactly.
    """
    if factor <= 0:
        raise ValueError("stretch factor must be positive")
    if spec.n_frames != roll.n_frames:
        raise ValueError("spectrogram and roll frame counts differ")
    n_in = spec.n_frames
    if n_in < 2:
        raise ValueError("need at least 2 frames to stretch")
    n_out = int(round(n_in * factor))
    if n_out < 1:
        raise ValueError(f"stretch factor {factor} leaves no output frames")

    if n_out == 1:
        positions = np.zeros(1)
    else:
        positions = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, n_in - 1)
    frac = (positions - lower)[:, None]
    values = (1.0 - frac) * spec.values[lower] + frac * spec.values[upper]
    nearest = np.floor(positions + 0.5).astype(int)
    targets = roll.values[np.minimum(nearest, n_in - 1)]

    rec_id = f"{spec.recording_id}_stretch{factor:g}"
    return _respec(spec, values, rec_id), TargetRoll(values=targets)


def subframe_shift(
    spec: MelSpectrogram, roll: TargetRoll, shift: float
) -> tuple[MelSpectrogram, TargetRoll]:
    """Interpolate new frames `shift` of a hop ahead of the originals.

    Output frame t is (1 - shift) * in[t] + shift * in[t + 1]; the frame
    rate is unchanged and the output is one frame shorter. Target rows are
    copied from the nearest original frame.
    """
    if not 0.0 < shift < 1.0:
        raise ValueError("shift must lie strictly inside (0, 1)")
    if spec.n_frames != roll.n_frames:
        raise ValueError("spectrogram and roll frame counts differ")
    n_in = spec.n_frames
    if n_in < 2:
        raise ValueError("need at least 2 frames to shift")

    values = (1.0 - shift) * spec.values[:-1] + shift * spec.values[1:]
    nearest = np.floor(np.arange(n_in - 1) + shift + 0.5).astype(int)
    targets = roll.values[np.minimum(nearest, n_in - 1)]

    rec_id = f"{spec.recording_id}_shift{shift:g}"
    return _respec(spec, values, rec_id), TargetRoll(values=targets)


def block_mix(
    spec_a: MelSpectrogram,
    roll_a: TargetRoll,
    spec_b: MelSpectrogram,
    roll_b: TargetRoll,
    recording_id: str | None = None,
) -> tuple[MelSpectrogram, TargetRoll]:
    """Mix two log-energy spectrograms by elementwise max.

    Rolls are OR-combined; both pairs are truncated to the shorter frame
    count first. Commutative and idempotent.
    """
    if spec_a.n_bands != spec_b.n_bands:
        raise ValueError(
            f"band count mismatch: {spec_a.n_bands} vs {spec_b.n_bands}"
        )
    if spec_a.n_frames != roll_a.n_frames or spec_b.n_frames != roll_b.n_frames:
        raise ValueError("spectrogram and roll frame counts differ")
    n = min(spec_a.n_frames, spec_b.n_frames)
    values = np.maximum(spec_a.values[:n], spec_b.values[:n])
    targets = roll_a.values[:n] | roll_b.values[:n]
    if recording_id is None:
        recording_id = f"{spec_a.recording_id}_mix_{spec_b.recording_id}"
    return _respec(spec_a, values, recording_id), TargetRoll(values=targets)


def augment_dataset(pairs, plan: AugmentationPlan) -> list[tuple[MelSpectrogram, TargetRoll]]:
    """Expand a dataset of (spectrogram, roll) pairs per the plan.

    Emits, per recording, one stretched copy per factor and one shifted
    copy per shift; per context, cuts the concatenated recordings into
    equal blocks and emits max-mixes of distinct block pairs until the
    mixed frame volume reaches mix_expansion times the context's original
    frames. Originals are not included in the output.
    """
    pairs = list(pairs)
    by_context: dict[str, list[tuple[MelSpectrogram, TargetRoll]]] = {}
    for spec, roll in pairs:
        if spec.n_frames != roll.n_frames:
            raise ValueError(
                f"misaligned pair for recording {spec.recording_id!r}"
            )
        by_context.setdefault(spec.context_id, []).append((spec, roll))

    out: list[tuple[MelSpectrogram, TargetRoll]] = []
    for ctx_index, context_id in enumerate(sorted(by_context)):
        group = by_context[context_id]
        for spec, roll in group:
            for factor in plan.stretch_factors:
                out.append(time_stretch(spec, roll, factor))
            for shift in plan.subframe_shifts:
                out.append(subframe_shift(spec, roll, shift))
        out.extend(_mix_context(context_id, ctx_index, group, plan))
    return out


def _mix_context(context_id, ctx_index, group, plan):
    """Emit block mixes for one context."""
    if plan.mix_expansion == 0:
        return []
    total_frames = sum(spec.n_frames for spec, _ in group)
    n_blocks = plan.mix_blocks_per_context
    if total_frames < 2:
        logger.warning("context %s too short to mix; skipping", context_id)
        return []
    if total_frames < n_blocks:
        n_blocks = total_frames
        logger.warning(
            "context %s has only %d frames; reducing block count to %d",
            context_id,
            total_frames,
            n_blocks,
        )
    block_len = total_frames // n_blocks

    features = np.concatenate([spec.values for spec, _ in group], axis=0)
    targets = np.concatenate([roll.values for _, roll in group], axis=0)
    template = group[0][0]

    pair_list = [(i, j) for i in range(n_blocks) for j in range(i + 1, n_blocks)]
    wanted = math.ceil(plan.mix_expansion * total_frames / block_len)
    if wanted > len(pair_list):
        logger.warning(
            "context %s: %d block pairs available, %d needed for the frame "
            "budget; emitting all pairs",
            context_id,
            len(pair_list),
            wanted,
        )
        wanted = len(pair_list)

    rng = np.random.default_rng([plan.rng_seed, ctx_index])
    order = rng.permutation(len(pair_list))
    mixes = []
    for idx in order[:wanted]:
        i, j = pair_list[idx]
        sl_i = slice(i * block_len, (i + 1) * block_len)
        sl_j = slice(j * block_len, (j + 1) * block_len)
        block_i = _respec(template, features[sl_i], f"{context_id}_block{i:03d}")
        block_j = _respec(template, features[sl_j], f"{context_id}_block{j:03d}")
        mixes.append(
            block_mix(
                block_i,
                TargetRoll(values=targets[sl_i]),
                block_j,
                TargetRoll(values=targets[sl_j]),
                recording_id=f"{context_id}_mix{i:03d}_{j:03d}",
            )
        )
    return mixes
