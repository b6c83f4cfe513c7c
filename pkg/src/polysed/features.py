"""Log-mel spectrogram extraction and per-band normalization.

Audio is amplitude-normalized per recording, split into 50 ms frames with
50% overlap, Hamming-windowed, and projected through a triangular mel
filterbank; log magnitudes are floored to avoid -inf on silence. Band
statistics are fitted on training material only and applied everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_matrix, check_label

DEFAULT_N_BANDS = 40
DEFAULT_FRAME_LEN_S = 0.05
DEFAULT_OVERLAP = 0.5
LOG_FLOOR = 1e-10


def mel_from_hz(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def hz_from_mel(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def fft_size_for(frame_len_samples: int) -> int:
    """Smallest power of two that is >= the frame length."""
    if frame_len_samples < 1:
        raise ValueError("frame length must be positive")
    return 1 << (int(frame_len_samples) - 1).bit_length()


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    """Number of full frames of `frame_len` samples advancing by `hop`."""
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


@dataclass
class AudioClip:
    """A mono audio signal with its provenance labels."""

    samples: np.ndarray
    sample_rate: float
    context_id: str = ""
    recording_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise ValueError("audio clip has no samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        check_label(self.context_id, "context_id")
        check_label(self.recording_id, "recording_id")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-mel energies, frames x bands, with frame-rate metadata."""

    values: np.ndarray
    frame_hop_s: float = 0.025
    frame_len_s: float = DEFAULT_FRAME_LEN_S
    context_id: str = ""
    recording_id: str = ""

    def __post_init__(self):
        self.values = as_float_matrix(self.values, "spectrogram values")
        if self.frame_hop_s <= 0 or self.frame_len_s <= 0:
            raise ValueError("frame timing fields must be positive")
        check_label(self.context_id, "context_id")
        check_label(self.recording_id, "recording_id")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


@dataclass
class BandNormalizer:
    """Per-band mean/standard-deviation statistics."""

    means: np.ndarray
    std_devs: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).ravel()
        self.std_devs = np.asarray(self.std_devs, dtype=np.float64).ravel()
        if self.means.shape != self.std_devs.shape:
            raise ValueError("means and std_devs must have equal length")
        if np.any(self.std_devs <= 0):
            raise ValueError("std_devs must be strictly positive")

    @property
    def n_bands(self) -> int:
        return self.means.size


@dataclass
class MelFilterbank:
    """Triangular mel filters as a weights matrix over FFT bins."""

    weights: np.ndarray
    band_edges_hz: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = as_float_matrix(self.weights, "filterbank weights")
        self.band_edges_hz = np.asarray(self.band_edges_hz, dtype=np.float64).ravel()
        if np.any(self.weights < 0):
            raise ValueError("filterbank weights must be nonnegative")
        if not (self.weights > 0).any(axis=1).all():
            raise ValueError("every band needs at least one positive weight")

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    @property
    def n_fft(self) -> int:
        return 2 * (self.weights.shape[1] - 1)


def normalize_amplitude(clip: AudioClip) -> AudioClip:
    """Scale samples so the peak absolute value is exactly 1.

    An all-zero clip is returned unchanged. Idempotent: renormalizing a
    normalized clip leaves the peak at 1.
    """
    peak = np.max(np.abs(clip.samples))
    if peak == 0.0:
        return clip
    return AudioClip(
        samples=clip.samples / peak,
        sample_rate=clip.sample_rate,
        context_id=clip.context_id,
        recording_id=clip.recording_id,
    )


def build_mel_filterbank(sample_rate: float, n_fft: int, n_bands: int) -> MelFilterbank:
    """Construct `n_bands` triangular filters on a mel-spaced grid.

    Band centers are equally spaced in mel between 0 Hz and sample_rate/2.
    Rejects band counts so dense that adjacent centers land on one FFT bin.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two >= 2")

    edges_hz = hz_from_mel(np.linspace(0.0, float(mel_from_hz(sample_rate / 2.0)), n_bands + 2))
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)

    center_bins = np.rint(edges_hz[1:-1] / (sample_rate / n_fft)).astype(int)
    if n_bands > 1 and np.any(np.diff(center_bins) < 1):
        raise ValueError(
            f"{n_bands} bands collapse onto shared FFT bins at n_fft={n_fft}; "
            "reduce n_bands or increase n_fft"
        )

    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    # Guard degenerate rows (possible only at extreme n_bands/n_fft combos).
    if not (weights > 0).any(axis=1).all():
        raise ValueError("some mel bands cover no FFT bin; increase n_fft")
    return MelFilterbank(weights=weights, band_edges_hz=edges_hz)


def extract_log_mel(
    clip: AudioClip,
    fb: MelFilterbank,
    frame_len_s: float = DEFAULT_FRAME_LEN_S,
    overlap: float = DEFAULT_OVERLAP,
) -> MelSpectrogram:
    """Compute the log-mel spectrogram of a clip.

    Frames are Hamming-windowed, magnitude spectra are projected through the
    filterbank, and the log is floored at LOG_FLOOR. The clip must be long
    enough for at least one frame.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    frame_len = int(round(frame_len_s * clip.sample_rate))
    hop = int(frame_len * (1.0 - overlap))
    if frame_len < 1 or hop < 1:
        raise ValueError("frame length / overlap leave no room to advance")
    n_fft = fb.n_fft
    if n_fft < frame_len:
        raise ValueError(
            f"filterbank n_fft={n_fft} is smaller than the {frame_len}-sample frame"
        )
    n_frames = frame_count(clip.samples.size, frame_len, hop)
    if n_frames < 1:
        raise ValueError(
            f"clip of {clip.samples.size} samples is shorter than one "
            f"{frame_len}-sample frame"
        )

    offsets = np.arange(n_frames) * hop
    frames = clip.samples[offsets[:, None] + np.arange(frame_len)[None, :]]
    frames = frames * np.hamming(frame_len)
    magnitudes = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    band_energies = magnitudes @ fb.weights.T
    values = np.log(np.maximum(band_energies, LOG_FLOOR))

    return MelSpectrogram(
        values=values,
        frame_hop_s=frame_len_s * (1.0 - overlap),
        frame_len_s=frame_len_s,
        context_id=clip.context_id,
        recording_id=clip.recording_id,
    )


def fit_normalizer(training_specs) -> BandNormalizer:
    """Fit per-band mean and population standard deviation over a pool.

    Bands with (near-)zero variance fall back to a unit standard deviation
    with a warning, making normalization a no-op there.
    """
    specs = list(training_specs)
    if not specs:
        raise ValueError("need at least one spectrogram to fit a normalizer")
    n_bands = specs[0].n_bands
    for s in specs:
        if s.n_bands != n_bands:
            raise ValueError("spectrograms in the pool have differing band counts")
    pooled = np.concatenate([s.values for s in specs], axis=0)
    if pooled.shape[0] < 2:
        raise ValueError("need at least two pooled frames to fit a normalizer")

    means = pooled.mean(axis=0)
    std_devs = pooled.std(axis=0)
    degenerate = std_devs <= 1e-12 * np.maximum(1.0, np.abs(means))
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} band(s) have zero variance; "
            "using unit standard deviation for them",
            stacklevel=2,
        )
        std_devs = np.where(degenerate, 1.0, std_devs)
    return BandNormalizer(means=means, std_devs=std_devs)


def apply_normalizer(spec: MelSpectrogram, norm: BandNormalizer) -> MelSpectrogram:
    """Standardize each band: (value - mean) / std."""
    if spec.n_bands != norm.n_bands:
        raise ValueError(
            f"band count mismatch: spectrogram has {spec.n_bands}, "
            f"normalizer has {norm.n_bands}"
        )
    return MelSpectrogram(
        values=(spec.values - norm.means) / norm.std_devs,
        frame_hop_s=spec.frame_hop_s,
        frame_len_s=spec.frame_len_s,
        context_id=spec.context_id,
        recording_id=spec.recording_id,
    )
