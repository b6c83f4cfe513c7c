"""F1 metrics: per-frame averaged F1 and one-second-block F1.

Scores are computed per context (frames and blocks pooled over the
context's recordings) and the overall score is the unweighted mean of the
context scores. Blocks never span recording boundaries; a trailing
partial block is scored like any other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequences import TargetRoll


@dataclass
class ContextScores:
    context_id: str
    f1_avgframe: float
    f1_1sec: float
    frame_tp: int
    frame_fp: int
    frame_fn: int
    block_tp: int
    block_fp: int
    block_fn: int


@dataclass
class EvalReport:
    contexts: list[ContextScores]
    overall_f1_avgframe: float
    overall_f1_1sec: float


def _count_arrays(pred: np.ndarray, truth: np.ndarray):
    pred_b = pred.astype(bool)
    truth_b = truth.astype(bool)
    tp = (pred_b & truth_b).sum(axis=1)
    fp = (pred_b & ~truth_b).sum(axis=1)
    fn = (~pred_b & truth_b).sum(axis=1)
    return tp, fp, fn


def _f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def framewise_f1(pred: TargetRoll, truth: TargetRoll, average: str = "frame") -> float:
    """F1 of predicted vs true class sets.

    average="frame": per-frame F1 averaged over frames, with a frame that
    is empty in both rolls scoring 1. average="micro": a single F1 from
    counts pooled over all frames and classes.
    """
    if pred.values.shape != truth.values.shape:
        raise ValueError(
            f"roll shapes differ: {pred.values.shape} vs {truth.values.shape}"
        )
    tp, fp, fn = _count_arrays(pred.values, truth.values)
    if average == "micro":
        return _f1_from_counts(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    if average != "frame":
        raise ValueError(f"unknown averaging mode {average!r}")
    denom = 2 * tp + fp + fn
    per_frame = np.where(denom == 0, 1.0, 2.0 * tp / np.where(denom == 0, 1, denom))
    return float(np.mean(per_frame))


def block_reduce(roll: TargetRoll, frames_per_block: int) -> np.ndarray:
    """OR-pool activity over consecutive frame blocks (final partial kept)."""
    if frames_per_block < 1:
        raise ValueError("frames_per_block must be >= 1")
    values = roll.values
    n_blocks = -(-values.shape[0] // frames_per_block)
    out = np.zeros((n_blocks, values.shape[1]), dtype=np.uint8)
    for b in range(n_blocks):
        chunk = values[b * frames_per_block : (b + 1) * frames_per_block]
        out[b] = chunk.any(axis=0)
    return out


def block_counts(
    pred: TargetRoll, truth: TargetRoll, frames_per_block: int
) -> tuple[int, int, int]:
    """Block-level TP/FP/FN totals for one recording."""
    if pred.values.shape != truth.values.shape:
        raise ValueError(
            f"roll shapes differ: {pred.values.shape} vs {truth.values.shape}"
        )
    pred_blocks = block_reduce(pred, frames_per_block).astype(bool)
    truth_blocks = block_reduce(truth, frames_per_block).astype(bool)
    tp = int((pred_blocks & truth_blocks).sum())
    fp = int((pred_blocks & ~truth_blocks).sum())
    fn = int((~pred_blocks & truth_blocks).sum())
    return tp, fp, fn


def block_f1(
    pred: TargetRoll,
    truth: TargetRoll,
    frame_hop_s: float,
    block_s: float = 1.0,
) -> float:
    """Micro-averaged F1 over non-overlapping blocks of `block_s` seconds.

    A class counts as active on a block when it is active in at least one
    frame of the block. With one-frame blocks this equals the pooled
    micro-averaged framewise F1.
    """
    frames_per_block = int(round(block_s / frame_hop_s))
    if frames_per_block < 1:
        raise ValueError("block shorter than one frame")
    tp, fp, fn = block_counts(pred, truth, frames_per_block)
    return _f1_from_counts(tp, fp, fn)


def evaluate_contexts(
    items,
    frame_hop_s: float,
    block_s: float = 1.0,
    framewise_average: str = "frame",
) -> EvalReport:
    """Score (pred, truth, context_id) triples per context and overall.

    Within a context, frames are pooled across recordings before the
    framewise score and block counts are summed across recordings (blocks
    are computed per recording so they never span a boundary). The overall
    scores are unweighted means over contexts.
    """
    items = list(items)
    if not items:
        raise ValueError("nothing to evaluate")
    frames_per_block = int(round(block_s / frame_hop_s))
    if frames_per_block < 1:
        raise ValueError("block shorter than one frame")

    by_context: dict[str, list[tuple[TargetRoll, TargetRoll]]] = {}
    for pred, truth, context_id in items:
        if pred.values.shape != truth.values.shape:
            raise ValueError(f"roll shapes differ in context {context_id!r}")
        by_context.setdefault(context_id, []).append((pred, truth))

    contexts = []
    for context_id in sorted(by_context):
        group = by_context[context_id]
        pred_all = TargetRoll(values=np.concatenate([p.values for p, _ in group]))
        truth_all = TargetRoll(values=np.concatenate([t.values for _, t in group]))
        f1_frame = framewise_f1(pred_all, truth_all, average=framewise_average)

        f_tp, f_fp, f_fn = _count_arrays(pred_all.values, truth_all.values)
        b_tp = b_fp = b_fn = 0
        for pred, truth in group:
            tp, fp, fn = block_counts(pred, truth, frames_per_block)
            b_tp, b_fp, b_fn = b_tp + tp, b_fp + fp, b_fn + fn
        contexts.append(
            ContextScores(
                context_id=context_id,
                f1_avgframe=f1_frame,
                f1_1sec=_f1_from_counts(b_tp, b_fp, b_fn),
                frame_tp=int(f_tp.sum()),
                frame_fp=int(f_fp.sum()),
                frame_fn=int(f_fn.sum()),
                block_tp=b_tp,
                block_fp=b_fp,
                block_fn=b_fn,
            )
        )

    return EvalReport(
        contexts=contexts,
        overall_f1_avgframe=float(np.mean([c.f1_avgframe for c in contexts])),
        overall_f1_1sec=float(np.mean([c.f1_1sec for c in contexts])),
    )
