"""Feature preparation: raw recordings to model-ready arrays.

Per instance: resample audio to 16 kHz, zero-center pad both signals to the
type's fixed duration (4.5 s for normal/deep, 2.5 s for strong), extract
MFCCs, carry motion through raw, align frame counts, standardize with
training-set statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .dataset import BreathInstance, DatasetManifest, InstanceRecord, load_instance
from .dsp import ChannelStats, MfccConfig, align, mfcc, motion_features, pad_center, resample
from .errors import DataError

TARGET_DURATIONS = {"normal": 4.5, "deep": 4.5, "strong": 2.5}

InstanceSource = Callable[[InstanceRecord], BreathInstance]


def manifest_source(manifest: DatasetManifest) -> InstanceSource:
    """Instance loader backed by the manifest's on-disk files."""
    return lambda record: load_instance(manifest, record)


def instance_features(instance: BreathInstance,
                      cfg: MfccConfig = MfccConfig()) -> tuple[np.ndarray, np.ndarray]:
    """(audio T x 20, motion T x 6) float32 feature matrices, frame-aligned."""
    target = TARGET_DURATIONS[instance.breath_type]
    audio = pad_center(resample(instance.audio, cfg.target_rate), target)
    motion = pad_center(instance.motion, target)
    a, m = align(mfcc(audio, cfg), motion_features(motion))
    return a.frames.astype(np.float32), m.frames.astype(np.float32)


def compute_features(records, source: InstanceSource,
                     cfg: MfccConfig = MfccConfig()) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Feature matrices keyed by instance id; raw (unstandardized)."""
    return {r.instance_id: instance_features(source(r), cfg) for r in records}


@dataclass(frozen=True)
class Bundle:
    """A stacked, standardized slice of the corpus ready for a model."""

    ids: tuple[str, ...]
    audio: np.ndarray   # (N, T, 20)
    motion: np.ndarray  # (N, T, 6)
    labels: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.ids)


def stack_features(features: Mapping[str, tuple[np.ndarray, np.ndarray]], ids) -> tuple[np.ndarray, np.ndarray]:
    ids = list(ids)
    if not ids:
        raise DataError("cannot stack an empty id list")
    missing = [i for i in ids if i not in features]
    if missing:
        raise DataError(f"no features for instances: {missing[:5]}")
    audio = np.stack([features[i][0] for i in ids])
    motion = np.stack([features[i][1] for i in ids])
    return audio, motion


def stack_stats(x: np.ndarray) -> ChannelStats:
    """Per-channel stats over all frames of an (N, T, F) stack; zero-variance
    channels get std 1 (same rule as dsp.compute_channel_stats)."""
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    std = flat.std(axis=0)
    return ChannelStats(flat.mean(axis=0), np.where(std > 0, std, 1.0))


def apply_stats(x: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return ((x - stats.mean) / stats.std).astype(np.float32)


def make_bundle(features, ids, subject_index: Mapping[str, int],
                audio_stats: ChannelStats, motion_stats: ChannelStats) -> Bundle:
    ids = tuple(sorted(ids))
    audio, motion = stack_features(features, ids)
    labels = np.array([subject_index[i.split("/")[0]] for i in ids], dtype=np.int64)
    return Bundle(ids, apply_stats(audio, audio_stats), apply_stats(motion, motion_stats), labels)
