"""Seeded synthetic breath cohorts.

Each subject gets a distinct acoustic and chest-motion fingerprint: audio is
amplitude-modulated band-passed noise (an inhale burst and an exhale burst)
shaped by subject resonances; motion is a slow quasi-periodic chest
displacement with per-axis amplitudes and phases. Loudness and motion scale
sit on geometric grids over the cohort, so any two subjects are separable by
construction at low noise. Instance durations are drawn from per-type
normal distributions clipped to the calibrated support.

Everything is a pure function of (spec, record identity), so instances can be
rendered independently, in any order, and streamed to disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    AUDIO_RATE,
    BREATH_TYPES,
    MOTION_RATE,
    BreathInstance,
    DatasetManifest,
    InstanceRecord,
    save_instance,
    save_manifest,
)
from .dsp import MotionTrace, Waveform
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class DurationStats:
    """Calibration targets for one breath type (seconds)."""

    min: float
    max: float
    median: float
    mean: float
    std: float


DURATION_CALIBRATION = {
    "normal": DurationStats(0.96, 4.13, 2.04, 2.12, 0.47),
    "deep": DurationStats(1.35, 4.49, 2.50, 2.58, 0.61),
    "strong": DurationStats(0.40, 2.48, 0.86, 1.02, 0.46),
}

# Instance counts per subject per breath type (uniform draw, inclusive).
DEFAULT_SESSIONS = (20, 61)

# Amplitude multipliers per breath type relative to the subject baseline.
_TYPE_MOTION_GAIN = {"normal": 1.0, "deep": 1.5, "strong": 1.9}
_TYPE_AUDIO_GAIN = {"normal": 1.0, "deep": 1.1, "strong": 1.25}

_BASE_MOTION_AMP = np.array([0.015, 0.030, 0.050, 1.0, 2.0, 3.5])


@dataclass(frozen=True)
class SubjectProfile:
    """Per-subject generative parameters."""

    subject_id: str
    duration_shift: dict[str, float]  # additive mean shift per type (s)
    duration_spread: float            # within-subject std as a fraction of the type std
    resonance_freqs: tuple[float, float]
    resonance_widths: tuple[float, float]
    resonance_mix: float              # weight of the second resonance
    spectral_tilt: float              # negative -> high-frequency rolloff
    audio_gain: float
    inhale_exhale_ratio: float
    motion_amp: np.ndarray            # (6,) accel g / gyro deg/s
    motion_dc: np.ndarray             # (6,)
    motion_phase: np.ndarray          # (6,) rad
    motion_phase2: np.ndarray         # (6,) rad, second harmonic
    harmonic2: float
    noise_level: float


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic recipe for one cohort."""

    n_subjects: int
    seed: int
    noise: float = 0.3
    sessions: tuple[int, int] = DEFAULT_SESSIONS

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ConfigError("synthetic cohorts need at least 2 subjects (verification needs impostors)")
        lo, hi = self.sessions
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad session range {self.sessions}")
        if self.noise < 0:
            raise ConfigError("noise level must be >= 0")

    def subject_ids(self) -> list[str]:
        return [f"s{i:03d}" for i in range(self.n_subjects)]


def make_profiles(spec: SynthSpec) -> dict[str, SubjectProfile]:
    n = spec.n_subjects
    rng = np.random.default_rng([spec.seed, 101])
    span = max(n - 1, 1)
    rank_freq = rng.permutation(n)
    rank_gain = rng.permutation(n)
    rank_motion = rng.permutation(n)
    rank_h2 = rng.permutation(n)

    profiles = {}
    for i, subject_id in enumerate(spec.subject_ids()):
        f1 = 350.0 * (4000.0 / 350.0) ** (rank_freq[i] / span)
        f2 = min(f1 * rng.uniform(1.7, 2.3), 7600.0)
        shifts = {
            t: float(np.clip(rng.normal(0.0, 0.4 * stats.std), -1.0 * stats.std, 1.0 * stats.std))
            for t, stats in DURATION_CALIBRATION.items()
        }
        profiles[subject_id] = SubjectProfile(
            subject_id=subject_id,
            duration_shift=shifts,
            duration_spread=0.85,
            resonance_freqs=(f1, f2),
            resonance_widths=(f1 * rng.uniform(0.10, 0.18), f2 * rng.uniform(0.12, 0.20)),
            resonance_mix=rng.uniform(0.3, 0.7),
            spectral_tilt=-rng.uniform(0.0, 1.2),
            audio_gain=0.10 * 8.0 ** (rank_gain[i] / span),
            inhale_exhale_ratio=rng.uniform(0.55, 1.6),
            motion_amp=_BASE_MOTION_AMP * (0.30 * 8.0 ** (rank_motion[i] / span)) * rng.uniform(0.85, 1.18, 6),
            motion_dc=np.concatenate([
                rng.uniform(-0.05, 0.05, 2),
                [0.98 + rng.uniform(-0.04, 0.04)],
                rng.uniform(-0.3, 0.3, 3),
            ]),
            motion_phase=rng.uniform(0.0, 2 * np.pi, 6),
            motion_phase2=rng.uniform(0.0, 2 * np.pi, 6),
            harmonic2=0.65 * rank_h2[i] / span,
            noise_level=spec.noise * rng.uniform(0.8, 1.2),
        )
    return profiles


def sample_duration(profile: SubjectProfile, breath_type: str, rng: np.random.Generator) -> float:
    stats = DURATION_CALIBRATION[breath_type]
    raw = stats.mean + profile.duration_shift[breath_type] + profile.duration_spread * stats.std * rng.standard_normal()
    return float(round(np.clip(raw, stats.min, stats.max), 6))


def synth_generate(spec: SynthSpec) -> DatasetManifest:
    """Plan a cohort: subjects, sessions, types, durations, and paths.

    Signals are rendered separately (`render_instance`) so large cohorts can
    stream to disk instead of living in memory.
    """
    profiles = make_profiles(spec)
    rng = np.random.default_rng([spec.seed, 202])
    lo, hi = spec.sessions
    records = []
    for subject_id in spec.subject_ids():
        n_sessions = int(rng.integers(lo, hi + 1))
        for sess in range(n_sessions):
            session_id = f"ses{sess:03d}"
            for breath_type in BREATH_TYPES:
                dur = sample_duration(profiles[subject_id], breath_type, rng)
                stem = f"{subject_id}/{session_id}/{breath_type}_000"
                records.append(
                    InstanceRecord(subject_id, session_id, breath_type, dur, f"{stem}.wav", f"{stem}.csv")
                )
    return DatasetManifest(tuple(records))


def _instance_rng(spec: SynthSpec, record: InstanceRecord) -> np.random.Generator:
    subject_idx = int(record.subject_id[1:])
    session_idx = int(record.session_id[3:])
    type_idx = BREATH_TYPES.index(record.breath_type)
    return np.random.default_rng([spec.seed, 303, subject_idx, session_idx, type_idx])


def _breath_envelope(t: np.ndarray, dur: float, ratio: float, jitter: float, rng) -> np.ndarray:
    """Inhale burst then exhale burst, as raised-cosine bumps."""
    def bump(center, width):
        x = (t - center) / width
        return np.where(np.abs(x) < 0.5, np.cos(np.pi * x) ** 2, 0.0)

    c_in = dur * (0.25 + jitter * rng.uniform(-1, 1))
    c_ex = dur * (0.72 + jitter * rng.uniform(-1, 1))
    return ratio * bump(c_in, 0.40 * dur) + bump(c_ex, 0.45 * dur)


def render_instance(spec: SynthSpec, record: InstanceRecord,
                    profiles: dict[str, SubjectProfile] | None = None) -> BreathInstance:
    """Deterministically synthesize the audio and motion signals of one record.

    Signals are quantized exactly as the on-disk formats store them (16-bit
    PCM audio, 6-decimal motion), so a save/load round trip is bit-identical.
    """
    if profiles is None:
        profiles = make_profiles(spec)
    p = profiles.get(record.subject_id)
    if p is None:
        raise DataError(f"no synthetic profile for subject {record.subject_id!r}")
    rng = _instance_rng(spec, record)
    dur = record.duration_s
    noise = p.noise_level

    # --- audio: resonance-shaped noise under the breath envelope -----------
    n = int(round(dur * AUDIO_RATE))
    white = rng.standard_normal(n)
    freqs = np.fft.rfftfreq(n, 1.0 / AUDIO_RATE)
    f1, f2 = p.resonance_freqs
    bw1, bw2 = p.resonance_widths
    shape = (
        np.exp(-(((freqs - f1) / bw1) ** 2))
        + p.resonance_mix * np.exp(-(((freqs - f2) / bw2) ** 2))
        + 0.02
    ) * (1.0 + freqs / 800.0) ** p.spectral_tilt
    colored = np.fft.irfft(np.fft.rfft(white) * shape, n)

    t_audio = np.arange(n) / AUDIO_RATE
    env = _breath_envelope(t_audio, dur, p.inhale_exhale_ratio, 0.02 + 0.03 * noise, rng)
    audio = colored * env
    rms = np.sqrt(np.mean(audio**2))
    gain = p.audio_gain * _TYPE_AUDIO_GAIN[record.breath_type]
    gain = gain * (1.0 + 0.06 * noise * rng.standard_normal())
    audio *= 0.25 * gain / max(rms, 1e-12)
    audio += noise * 0.5 * 0.01 * rng.standard_normal(n)
    audio = np.clip(audio, -0.999, 0.999)
    audio = np.round(audio * 32767.0) / 32767.0

    # --- motion: tapered quasi-periodic chest displacement ------------------
    m = int(round(dur * MOTION_RATE))
    t_motion = np.arange(m) / MOTION_RATE
    phase = 2 * np.pi * t_motion / dur
    taper = np.sin(np.clip(np.pi * t_motion / dur, 0.0, np.pi))
    jit = 0.15 * noise * rng.uniform(-1, 1, 6)
    amp = p.motion_amp * _TYPE_MOTION_GAIN[record.breath_type]
    amp = amp * (1.0 + 0.08 * noise * rng.standard_normal(6))
    base = np.sin(phase[:, None] + p.motion_phase + jit) + p.harmonic2 * np.sin(
        2 * phase[:, None] + p.motion_phase2
    )
    motion = p.motion_dc + amp * base * taper[:, None]
    motion += noise * 1.5 * (0.25 * amp + 1e-4) * rng.standard_normal((m, 6))
    motion = np.round(motion, 6)

    return BreathInstance(record, Waveform(audio, float(AUDIO_RATE)), MotionTrace(motion, MOTION_RATE))


def write_dataset(spec: SynthSpec, root: Path, force: bool = False) -> DatasetManifest:
    """Generate a cohort and stream it to disk in the canonical layout."""
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise ConfigError(f"target directory {root} is not empty (pass force to overwrite)")
    manifest = synth_generate(spec)
    profiles = make_profiles(spec)
    for record in manifest.records:
        inst = render_instance(spec, record, profiles)
        save_instance(root, record, inst.audio, inst.motion)
    on_disk = DatasetManifest(manifest.records, root=root)
    save_manifest(on_disk, root)
    return on_disk
