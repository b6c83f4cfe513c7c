"""Flat key=value run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .augment import (
    DEFAULT_MIX_BLOCKS,
    DEFAULT_MIX_EXPANSION,
    DEFAULT_STRETCH_FACTORS,
    DEFAULT_SUBFRAME_SHIFTS,
    AugmentationPlan,
)
from .errors import ConfigError
from .synthgen import DEFAULT_POLYPHONY_TARGET, SynthSpec, default_class_defs
from .training import TrainConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _parse_tuple(cast):
    def parse(text: str):
        items = [part.strip() for part in text.split(",") if part.strip()]
        return tuple(cast(item) for item in items)

    return parse


@dataclass
class RunConfig:
    """Every knob of the pipeline, overridable from file and flags."""

    # feature extraction
    sample_rate: int = 16000
    n_bands: int = 40
    frame_len_s: float = 0.05
    overlap: float = 0.5
    # architecture and training
    cells_per_layer: tuple = (200, 200, 200, 200)
    eta: float = 0.005
    rho: float = 0.9
    epsilon: float = 1e-8
    noise_sigma: float = 0.2
    batch_size: int = 600
    patience_epochs: int = 20
    max_epochs: int = 500
    n_restarts: int = 5
    sequence_lengths: tuple = (10, 25, 100)
    augmented_sequence_lengths: tuple = (25,)
    test_sequence_length: int = 100
    threshold: float = 0.5
    seed: int = 0
    augment: bool = False
    framewise_average: str = "frame"
    # augmentation plan
    stretch_factors: tuple = DEFAULT_STRETCH_FACTORS
    subframe_shifts: tuple = DEFAULT_SUBFRAME_SHIFTS
    mix_blocks_per_context: int = DEFAULT_MIX_BLOCKS
    mix_expansion: int = DEFAULT_MIX_EXPANSION
    # synthetic dataset
    synth_contexts: int = 10
    synth_recordings_per_context: int = 8
    synth_recording_len_s: float = 30.0
    synth_classes: int = 6
    synth_classes_per_context: int = 6
    polyphony_probs: tuple = DEFAULT_POLYPHONY_TARGET
    event_duration_s: tuple = (0.4, 2.5)
    event_amplitude: tuple = (0.2, 0.8)
    event_freq_range: tuple = (250.0, 6000.0)
    n_folds: int = 5
    # paths (None: derived from out_dir)
    out_dir: str = "runs/default"
    audio_dir: str | None = None
    features_dir: str | None = None
    annotations_file: str | None = None
    class_map_file: str | None = None
    folds_file: str | None = None
    model_dir: str | None = None
    model_file: str | None = None
    detections_file: str | None = None
    report_prefix: str | None = None
    jobs: int = 1

    def path(self, name: str) -> Path:
        """Resolve a path field, deriving the default under out_dir."""
        defaults = {
            "audio_dir": "audio",
            "features_dir": "features",
            "annotations_file": "annotations.csv",
            "class_map_file": "class_map.csv",
            "folds_file": "folds.csv",
            "model_dir": "models",
            "detections_file": "detections.csv",
            "report_prefix": "report",
        }
        value = getattr(self, name)
        if value is not None:
            return Path(value)
        return Path(self.out_dir) / defaults[name]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            eta=self.eta,
            rho=self.rho,
            epsilon=self.epsilon,
            noise_sigma=self.noise_sigma,
            batch_size=self.batch_size,
            patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs,
            n_restarts=self.n_restarts,
            cells_per_layer=self.cells_per_layer,
            sequence_lengths=self.sequence_lengths,
            augmented_sequence_lengths=self.augmented_sequence_lengths,
            test_sequence_length=self.test_sequence_length,
            threshold=self.threshold,
            rng_seed=self.seed,
            augment=self.augment,
            plan=self.augmentation_plan(),
        )

    def augmentation_plan(self) -> AugmentationPlan:
        return AugmentationPlan(
            stretch_factors=self.stretch_factors,
            subframe_shifts=self.subframe_shifts,
            mix_blocks_per_context=self.mix_blocks_per_context,
            mix_expansion=self.mix_expansion,
            rng_seed=self.seed,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            n_contexts=self.synth_contexts,
            classes_per_context=self.synth_classes_per_context,
            recordings_per_context=self.synth_recordings_per_context,
            recording_len_s=self.synth_recording_len_s,
            polyphony_target=self.polyphony_probs,
            class_defs=default_class_defs(
                n_classes=self.synth_classes,
                freq_range=self.event_freq_range,
                duration_s=self.event_duration_s,
                amplitude=self.event_amplitude,
            ),
            rng_seed=self.seed,
            sample_rate=self.sample_rate,
            frame_hop_s=self.frame_len_s * (1.0 - self.overlap),
            frame_len_s=self.frame_len_s,
        )

    def snapshot(self) -> dict:
        """JSON-serializable copy of every field, for the model container."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


def _field_parser(f):
    if f.type in ("tuple", tuple):
        sample = f.default if isinstance(f.default, tuple) else ()
        cast = int if sample and all(isinstance(v, int) for v in sample) else float
        return _parse_tuple(cast)
    if f.type in ("int", int):
        return int
    if f.type in ("float", float):
        return float
    if f.type in ("bool", bool):
        return _parse_bool
    return lambda text: text


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional key=value file plus overrides.

    File syntax: one `key = value` per line, `#` comments, blank lines
    ignored. Override values may be already-typed (from CLI flags) or
    strings. Flags win over the file.
    """
    cfg = RunConfig()
    parsers = {f.name: _field_parser(f) for f in fields(RunConfig)}

    def assign(key, raw, where):
        if key not in parsers:
            raise ConfigError(f"{where}: unknown configuration key {key!r}")
        if isinstance(raw, str):
            try:
                value = parsers[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc
        else:
            value = tuple(raw) if isinstance(raw, (list, tuple)) else raw
        setattr(cfg, key, value)

    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = stripped.partition("=")
            assign(key.strip(), raw.strip(), f"{path}:{lineno}")

    for key, value in (overrides or {}).items():
        if value is not None:
            assign(key, value, "command line")
    return cfg
