"""Training loop with early stopping, restarts, and cross-validation.

One epoch presents every training sequence once in shuffled fixed-length
minibatches; after each epoch the validation RMSE is computed noise-free
and the best-so-far parameters are snapshotted. Training stops when the
validation cost has not improved for `patience_epochs` epochs (or at
`max_epochs`, or on divergence) and the best snapshot is returned.

Cross-validation splits by whole recordings. Augmented material and
normalizer statistics are derived from each fold's training partition
only; a guard aborts the fold if augmented or out-of-partition recordings
reach a validation or test set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentationPlan, augment_dataset, is_augmented_id
from .errors import DivergenceError, LeakageError
from .evaluation import EvalReport, evaluate_contexts, framewise_f1
from .features import BandNormalizer, apply_normalizer, fit_normalizer
from .detection import threshold_outputs
from .network import (
    BlstmNetwork,
    bptt,
    clone_network,
    cost_terms,
    forward_batch,
    init_network,
    init_rmsprop,
    predict_posteriors,
    rmsprop_update,
)
from .sequences import TargetRoll, make_minibatches, split_multiscale

logger = logging.getLogger(__name__)

# Purpose tags for deriving independent seed streams from one base seed.
_SEED_INIT = 1
_SEED_SHUFFLE = 2
_SEED_NOISE = 3
_SEED_AUGMENT = 4


def derive_seed(*components: int) -> int:
    return int(np.random.SeedSequence(list(components)).generate_state(1)[0])


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    eta: float = 0.005
    rho: float = 0.9
    epsilon: float = 1e-8
    noise_sigma: float = 0.2
    batch_size: int = 600
    patience_epochs: int = 20
    max_epochs: int = 500
    n_restarts: int = 5
    cells_per_layer: tuple = (200, 200, 200, 200)
    sequence_lengths: tuple = (10, 25, 100)
    augmented_sequence_lengths: tuple = (25,)
    test_sequence_length: int = 100
    threshold: float = 0.5
    rng_seed: int = 0
    augment: bool = False
    plan: AugmentationPlan = field(default_factory=AugmentationPlan)

    def __post_init__(self):
        if min(self.eta, self.epsilon, self.noise_sigma + 1e-300) <= 0:
            raise ValueError("eta and epsilon must be positive, noise_sigma >= 0")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if min(self.batch_size, self.patience_epochs, self.max_epochs,
               self.n_restarts, self.test_sequence_length) < 1:
            raise ValueError("counts must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        self.cells_per_layer = tuple(int(c) for c in self.cells_per_layer)
        self.sequence_lengths = tuple(int(t) for t in self.sequence_lengths)
        self.augmented_sequence_lengths = tuple(
            int(t) for t in self.augmented_sequence_lengths
        )


@dataclass
class FoldSplit:
    """Disjoint train/validation/test recording-id sets for one fold."""

    fold_id: int
    train_ids: frozenset
    val_ids: frozenset
    test_ids: frozenset

    def __post_init__(self):
        sets = (self.train_ids, self.val_ids, self.test_ids)
        if any(a & b for i, a in enumerate(sets) for b in sets[i + 1 :]):
            raise ValueError("fold partitions overlap")
        if not (self.train_ids and self.val_ids and self.test_ids):
            raise ValueError(f"fold {self.fold_id} has an empty partition")


@dataclass
class TrainRecord:
    """Per-epoch costs and the stopping outcome of one run."""

    train_rmse: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    wall_time_s: float = 0.0

    @property
    def best_val_rmse(self) -> float:
        if not self.val_rmse or self.best_epoch < 1:
            return float("nan")
        return self.val_rmse[self.best_epoch - 1]


def _pooled_rmse(net: BlstmNetwork, batches) -> float:
    total_sq = 0.0
    total_n = 0
    for batch in batches:
        sq, n = cost_terms(net, batch.features, batch.targets)
        total_sq += sq
        total_n += n
    if total_n == 0:
        return float("nan")
    return float(np.sqrt(total_sq / total_n))


def run_training_loop(
    net: BlstmNetwork,
    train_sequences,
    val_sequences,
    cfg: TrainConfig,
    base_seed: int,
    val_cost_fn=None,
) -> tuple[BlstmNetwork, TrainRecord]:
    """Train `net` in place and return the best-validation snapshot.

    `val_cost_fn`, when given, replaces the validation RMSE computation
    (used by tests to script cost trajectories). Without validation
    sequences the loop runs to max_epochs and keeps the final parameters.
    """
    train_sequences = list(train_sequences)
    if not train_sequences:
        raise ValueError("no training sequences")
    val_batches = None
    if val_cost_fn is None and val_sequences is not None:
        val_list = list(val_sequences)
        if val_list:
            val_batches = make_minibatches(
                val_list, cfg.batch_size, rng_seed=derive_seed(base_seed, 0)
            )

    state = init_rmsprop(net, eta=cfg.eta, rho=cfg.rho, epsilon=cfg.epsilon)
    noise_rng = np.random.default_rng(derive_seed(base_seed, _SEED_NOISE))
    record = TrainRecord()
    best_net = clone_network(net)
    best_val = float("inf")
    started = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        epoch_started = time.perf_counter()
        batches = make_minibatches(
            train_sequences,
            cfg.batch_size,
            rng_seed=derive_seed(base_seed, _SEED_SHUFFLE, epoch),
        )
        total_sq = 0.0
        total_n = 0
        diverged = False
        for batch in batches:
            trace = forward_batch(
                net, batch.features, noise_sigma=cfg.noise_sigma, rng=noise_rng
            )
            grads, rmse = bptt(net, trace, batch.targets)
            n_elems = batch.targets.size
            total_sq += rmse * rmse * n_elems
            total_n += n_elems
            try:
                rmsprop_update(net, grads, state)
            except DivergenceError as exc:
                logger.warning("epoch %d: %s; stopping", epoch, exc)
                diverged = True
                break

        train_rmse = float(np.sqrt(total_sq / total_n)) if total_n else float("nan")
        if val_cost_fn is not None:
            val_rmse = float(val_cost_fn(net))
        elif val_batches is not None:
            val_rmse = _pooled_rmse(net, val_batches)
        else:
            val_rmse = float("nan")

        record.train_rmse.append(train_rmse)
        record.val_rmse.append(val_rmse)
        record.epoch_seconds.append(time.perf_counter() - epoch_started)
        monitored = val_rmse if not np.isnan(val_rmse) else None
        if monitored is not None and monitored < best_val:
            best_val = monitored
            best_net = clone_network(net)
            record.best_epoch = epoch
        logger.debug(
            "epoch %d: train_rmse=%.5f val_rmse=%.5f", epoch, train_rmse, val_rmse
        )

        if diverged:
            record.stop_reason = "diverged"
            break
        if monitored is not None and epoch - record.best_epoch >= cfg.patience_epochs:
            record.stop_reason = "patience"
            break
    else:
        record.stop_reason = "max_epochs"

    if record.best_epoch == 0:
        # No validation signal: keep the final parameters.
        best_net = net
        record.best_epoch = len(record.train_rmse)
    record.wall_time_s = time.perf_counter() - started
    return best_net, record


def train_fold(
    train_sequences,
    val_sequences,
    cfg: TrainConfig,
    n_bands: int,
    n_classes: int,
    restart: int = 0,
    val_cost_fn=None,
) -> tuple[BlstmNetwork, TrainRecord]:
    """One training run from a fresh random initialization."""
    init_seed = derive_seed(cfg.rng_seed, _SEED_INIT, restart)
    net = init_network(n_bands, cfg.cells_per_layer, n_classes, init_seed)
    base_seed = derive_seed(cfg.rng_seed, restart)
    return run_training_loop(
        net, train_sequences, val_sequences, cfg, base_seed, val_cost_fn=val_cost_fn
    )


def _predict_rolls(net, pairs, cfg):
    """Thresholded predictions for full recordings, pooled with the truth."""
    preds = []
    for spec, roll in pairs:
        posteriors = predict_posteriors(
            net, spec.values, chunk_len=cfg.test_sequence_length
        )
        preds.append((threshold_outputs(posteriors, cfg.threshold), roll, spec))
    return preds


def validation_framewise_f1(net: BlstmNetwork, val_pairs, cfg: TrainConfig) -> float:
    """Framewise F1 over all validation recordings pooled together."""
    preds = _predict_rolls(net, val_pairs, cfg)
    pred_all = TargetRoll(values=np.concatenate([p.values for p, _, _ in preds]))
    truth_all = TargetRoll(values=np.concatenate([t.values for _, t, _ in preds]))
    return framewise_f1(pred_all, truth_all)


def select_best(candidates, val_pairs, cfg: TrainConfig):
    """Pick the restart with the highest validation framewise F1.

    Ties fall back to the lower validation RMSE, then the lower restart
    index. Returns (network, record, f1).
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates to select from")
    scored = []
    for idx, (net, record) in enumerate(candidates):
        f1 = validation_framewise_f1(net, val_pairs, cfg)
        scored.append((f1, record.best_val_rmse, idx, net, record))
        logger.info(
            "restart %d: val framewise F1 %.4f (best RMSE %.5f)",
            idx,
            f1,
            record.best_val_rmse,
        )
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))
    f1, _, _, net, record = scored[0]
    return net, record, f1


@dataclass
class FoldData:
    """Everything one fold needs, with provenance preserved."""

    split: FoldSplit
    train_pairs: list
    augmented_pairs: list
    val_pairs: list
    test_pairs: list
    normalizer: BandNormalizer


def make_fold_split(fold_map: dict, fold_id: int) -> FoldSplit:
    """Test on `fold_id`, validate on the next fold (cyclic), train on the rest."""
    fold_ids = sorted(set(fold_map.values()))
    if fold_id not in fold_ids:
        raise ValueError(f"fold {fold_id} not present in the fold assignment")
    if len(fold_ids) < 3:
        raise ValueError("need at least 3 folds for disjoint train/val/test")
    val_fold = fold_ids[(fold_ids.index(fold_id) + 1) % len(fold_ids)]
    test_ids = frozenset(r for r, f in fold_map.items() if f == fold_id)
    val_ids = frozenset(r for r, f in fold_map.items() if f == val_fold)
    train_ids = frozenset(fold_map) - test_ids - val_ids
    return FoldSplit(
        fold_id=fold_id, train_ids=train_ids, val_ids=val_ids, test_ids=test_ids
    )


def prepare_fold(pairs, split: FoldSplit, cfg: TrainConfig) -> FoldData:
    """Partition recordings, augment the training side, fit the normalizer.

    Normalizer statistics come from the original (pre-augmentation)
    training recordings; augmentation operates on the raw log-mel values
    and the fitted normalizer is applied to every partition afterwards.
    """
    by_id = {}
    for spec, roll in pairs:
        if spec.recording_id in by_id:
            raise ValueError(f"duplicate recording id {spec.recording_id!r}")
        by_id[spec.recording_id] = (spec, roll)
    missing = (split.train_ids | split.val_ids | split.test_ids) - set(by_id)
    if missing:
        raise ValueError(f"fold references unknown recordings: {sorted(missing)}")

    def take(ids):
        return [by_id[r] for r in sorted(ids)]

    train_pairs = take(split.train_ids)
    val_pairs = take(split.val_ids)
    test_pairs = take(split.test_ids)

    augmented_pairs = []
    if cfg.augment:
        plan = replace(
            cfg.plan, rng_seed=derive_seed(cfg.rng_seed, _SEED_AUGMENT, split.fold_id)
        )
        augmented_pairs = augment_dataset(train_pairs, plan)

    normalizer = fit_normalizer([spec for spec, _ in train_pairs])

    def normalize(group):
        return [(apply_normalizer(spec, normalizer), roll) for spec, roll in group]

    return FoldData(
        split=split,
        train_pairs=normalize(train_pairs),
        augmented_pairs=normalize(augmented_pairs),
        val_pairs=normalize(val_pairs),
        test_pairs=normalize(test_pairs),
        normalizer=normalizer,
    )


def check_fold_leakage(data: FoldData) -> None:
    """Abort when augmented or foreign recordings leak across partitions."""
    for name, pairs, allowed in (
        ("validation", data.val_pairs, data.split.val_ids),
        ("test", data.test_pairs, data.split.test_ids),
    ):
        for spec, _ in pairs:
            if is_augmented_id(spec.recording_id):
                raise LeakageError(
                    f"augmented recording {spec.recording_id!r} in the {name} set"
                )
            if spec.recording_id not in allowed:
                raise LeakageError(
                    f"recording {spec.recording_id!r} does not belong to the "
                    f"{name} partition of fold {data.split.fold_id}"
                )
    for spec, _ in data.train_pairs:
        if spec.recording_id not in data.split.train_ids:
            raise LeakageError(
                f"recording {spec.recording_id!r} does not belong to the "
                f"training partition of fold {data.split.fold_id}"
            )
    for spec, _ in data.augmented_pairs:
        if not is_augmented_id(spec.recording_id):
            raise LeakageError(
                f"unexpected original recording {spec.recording_id!r} among "
                "augmented material"
            )


@dataclass
class FoldResult:
    fold_id: int
    network: BlstmNetwork
    report: EvalReport
    record: TrainRecord
    restart_records: list
    validation_f1: float


def run_fold(data: FoldData, cfg: TrainConfig, class_names=None) -> FoldResult:
    """Train restarts on one prepared fold and evaluate the winner."""
    check_fold_leakage(data)
    train_sequences = []
    for spec, roll in data.train_pairs:
        train_sequences.extend(split_multiscale(spec, roll, cfg.sequence_lengths))
    for spec, roll in data.augmented_pairs:
        train_sequences.extend(
            split_multiscale(spec, roll, cfg.augmented_sequence_lengths, augmented=True)
        )
    val_sequences = []
    for spec, roll in data.val_pairs:
        val_sequences.extend(
            split_multiscale(spec, roll, (cfg.test_sequence_length,))
        )
    if not train_sequences:
        raise ValueError("training partition produced no sequences")
    if not val_sequences:
        raise ValueError("validation partition produced no sequences")

    n_bands = data.train_pairs[0][0].n_bands
    n_classes = data.train_pairs[0][1].n_classes
    candidates = []
    records = []
    for restart in range(cfg.n_restarts):
        logger.info("fold %d: restart %d", data.split.fold_id, restart)
        net, record = train_fold(
            train_sequences, val_sequences, cfg, n_bands, n_classes, restart=restart
        )
        candidates.append((net, record))
        records.append(record)

    best_net, best_record, val_f1 = select_best(candidates, data.val_pairs, cfg)
    best_net.normalizer = data.normalizer
    best_net.class_names = list(class_names) if class_names is not None else None

    preds = _predict_rolls(best_net, data.test_pairs, cfg)
    report = evaluate_contexts(
        [(pred, truth, spec.context_id) for pred, truth, spec in preds],
        frame_hop_s=data.test_pairs[0][0].frame_hop_s,
    )
    return FoldResult(
        fold_id=data.split.fold_id,
        network=best_net,
        report=report,
        record=best_record,
        restart_records=records,
        validation_f1=val_f1,
    )


def cross_validate(
    pairs, fold_map: dict, cfg: TrainConfig, folds=None, class_names=None
) -> list[FoldResult]:
    """Run the train/select/evaluate protocol for each requested fold."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no recordings")
    assigned = set(fold_map)
    present = {spec.recording_id for spec, _ in pairs}
    unassigned = present - assigned
    if unassigned:
        raise ValueError(f"recordings without a fold: {sorted(unassigned)}")

    fold_ids = sorted(set(fold_map.values())) if folds is None else sorted(folds)
    results = []
    for fold_id in fold_ids:
        split = make_fold_split(fold_map, fold_id)
        data = prepare_fold(pairs, split, cfg)
        results.append(run_fold(data, cfg, class_names=class_names))
    return results
