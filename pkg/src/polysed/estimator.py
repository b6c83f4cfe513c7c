"""Scikit-learn style wrappers so the pipeline composes with the ecosystem.

`LogMelExtractor` and `SpectrogramNormalizer` are transformers over lists
of clips/spectrograms; `BlstmEventDetector` is the trainable model with the
usual fit/predict/predict_proba/score surface and get_params support.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .detection import threshold_outputs
from .evaluation import framewise_f1
from .features import (
    apply_normalizer,
    build_mel_filterbank,
    extract_log_mel,
    fft_size_for,
    fit_normalizer,
    normalize_amplitude,
)
from .network import predict_posteriors
from .sequences import TargetRoll, TrainingSequence
from .training import TrainConfig, train_fold
from .validation import as_binary_matrix, as_float_matrix, check_aligned_frames


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Map audio clips to amplitude-normalized log-mel spectrograms."""

    def __init__(self, sample_rate=16000, n_bands=40, frame_len_s=0.05, overlap=0.5):
        self.sample_rate = sample_rate
        self.n_bands = n_bands
        self.frame_len_s = frame_len_s
        self.overlap = overlap

    def fit(self, X=None, y=None):
        frame_len = int(round(self.frame_len_s * self.sample_rate))
        self.n_fft_ = fft_size_for(frame_len)
        self.filterbank_ = build_mel_filterbank(
            self.sample_rate, self.n_fft_, self.n_bands
        )
        return self

    def transform(self, X):
        if not hasattr(self, "filterbank_"):
            self.fit()
        out = []
        for clip in X:
            if clip.sample_rate != self.sample_rate:
                raise ValueError(
                    f"clip {clip.recording_id!r} has sample rate "
                    f"{clip.sample_rate}, extractor expects {self.sample_rate}"
                )
            out.append(
                extract_log_mel(
                    normalize_amplitude(clip),
                    self.filterbank_,
                    frame_len_s=self.frame_len_s,
                    overlap=self.overlap,
                )
            )
        return out


class SpectrogramNormalizer(TransformerMixin, BaseEstimator):
    """Standardize each mel band using statistics of the fitted pool."""

    def fit(self, X, y=None):
        self.normalizer_ = fit_normalizer(X)
        return self

    def transform(self, X):
        return [apply_normalizer(spec, self.normalizer_) for spec in X]


class BlstmEventDetector(BaseEstimator):
    """Multilabel per-frame event detector built on a bidirectional LSTM.

    fit takes lists of (frames, bands) feature matrices and aligned
    (frames, classes) binary target matrices; features are expected to be
    normalized already. predict_proba returns per-frame class posteriors
    (independent logistic units, so rows need not sum to 1) and predict
    thresholds them.
    """

    def __init__(
        self,
        cells_per_layer=(200, 200, 200, 200),
        learning_rate=0.005,
        decay_rate=0.9,
        epsilon=1e-8,
        noise_sigma=0.2,
        batch_size=600,
        patience_epochs=20,
        max_epochs=500,
        threshold=0.5,
        test_sequence_length=100,
        random_state=0,
    ):
        self.cells_per_layer = cells_per_layer
        self.learning_rate = learning_rate
        self.decay_rate = decay_rate
        self.epsilon = epsilon
        self.noise_sigma = noise_sigma
        self.batch_size = batch_size
        self.patience_epochs = patience_epochs
        self.max_epochs = max_epochs
        self.threshold = threshold
        self.test_sequence_length = test_sequence_length
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            eta=self.learning_rate,
            rho=self.decay_rate,
            epsilon=self.epsilon,
            noise_sigma=self.noise_sigma,
            batch_size=self.batch_size,
            patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs,
            n_restarts=1,
            cells_per_layer=tuple(self.cells_per_layer),
            test_sequence_length=self.test_sequence_length,
            threshold=self.threshold,
            rng_seed=self.random_state,
        )

    @staticmethod
    def _as_sequences(X, y):
        sequences = []
        for idx, (features, targets) in enumerate(zip(X, y)):
            features = as_float_matrix(features, f"X[{idx}]")
            targets = as_binary_matrix(targets, f"y[{idx}]")
            check_aligned_frames(features, targets)
            sequences.append(
                TrainingSequence(
                    features=features, targets=targets, source_id=f"seq{idx:05d}"
                )
            )
        return sequences

    def fit(self, X, y, validation_data=None):
        """Train with early stopping on `validation_data` when given.

        Without validation data the run keeps the final parameters after
        max_epochs instead of an early-stopping snapshot.
        """
        if len(X) != len(y):
            raise ValueError("X and y must have equal length")
        train_sequences = self._as_sequences(X, y)
        val_sequences = None
        if validation_data is not None:
            val_sequences = self._as_sequences(*validation_data)
        cfg = self._config()
        n_bands = train_sequences[0].features.shape[1]
        n_classes = train_sequences[0].targets.shape[1]
        self.network_, self.record_ = train_fold(
            train_sequences, val_sequences, cfg, n_bands, n_classes, restart=0
        )
        self.n_bands_ = n_bands
        self.n_classes_ = n_classes
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise ValueError("estimator is not fitted yet; call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        return [
            predict_posteriors(
                self.network_,
                as_float_matrix(x, "features"),
                chunk_len=self.test_sequence_length,
            )
            for x in X
        ]

    def predict(self, X):
        return [
            threshold_outputs(proba, self.threshold).values
            for proba in self.predict_proba(X)
        ]

    def score(self, X, y):
        """Framewise F1 over all frames of all sequences pooled."""
        preds = self.predict(X)
        pred_all = np.concatenate(preds, axis=0)
        truth_all = np.concatenate([as_binary_matrix(t, "targets") for t in y], axis=0)
        return framewise_f1(
            TargetRoll(values=pred_all), TargetRoll(values=truth_all)
        )
