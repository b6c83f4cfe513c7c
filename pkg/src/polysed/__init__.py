"""Polyphonic sound event detection with bidirectional LSTM networks."""

from .augment import AugmentationPlan, augment_dataset, block_mix, subframe_shift, time_stretch
from .detection import DetectedEvent, roll_to_events, threshold_outputs
from .errors import (
    ConfigError,
    DivergenceError,
    GenerationError,
    LeakageError,
    PolysedError,
)
from .evaluation import EvalReport, block_f1, evaluate_contexts, framewise_f1
from .features import (
    AudioClip,
    BandNormalizer,
    MelFilterbank,
    MelSpectrogram,
    apply_normalizer,
    build_mel_filterbank,
    extract_log_mel,
    fit_normalizer,
    normalize_amplitude,
)
from .network import (
    BlstmNetwork,
    ForwardTrace,
    LstmDirectionParams,
    LstmLayerParams,
    OutputLayerParams,
    RmsPropState,
    bptt,
    forward,
    forward_batch,
    init_network,
    init_rmsprop,
    lstm_step,
    predict_posteriors,
    rmsprop_update,
)
from .sequences import (
    EventAnnotation,
    SequenceBatch,
    TargetRoll,
    TrainingSequence,
    annotations_to_roll,
    make_minibatches,
    split_for_inference,
    split_multiscale,
)
from .estimator import BlstmEventDetector, LogMelExtractor, SpectrogramNormalizer
from .synthgen import (
    EventClassDef,
    PolyphonyStats,
    SynthSpec,
    default_class_defs,
    generate_dataset,
    measure_polyphony,
)
from .training import (
    FoldResult,
    FoldSplit,
    TrainConfig,
    TrainRecord,
    check_fold_leakage,
    cross_validate,
    make_fold_split,
    prepare_fold,
    run_fold,
    select_best,
    train_fold,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
