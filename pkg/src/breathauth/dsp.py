"""Signal preprocessing: resampling, zero-center padding, MFCC extraction,
frame alignment, and per-channel standardization.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from .errors import ConfigError, DataError

AUDIO_MFCC = "audio-mfcc"
MOTION = "motion"

MOTION_CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise DataError(f"{what} contains non-finite samples")


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] at a fixed sampling rate."""

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"waveform samples must be 1-D, got shape {samples.shape}")
        _check_finite(samples, "waveform")
        if self.rate <= 0:
            raise DataError(f"waveform rate must be positive, got {self.rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass(frozen=True)
class MotionTrace:
    """6-channel chest-motion samples (accel x/y/z in g, gyro x/y/z in deg/s)."""

    samples: np.ndarray
    rate: float = 50.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 6:
            raise DataError(f"motion samples must be Nx6, got shape {samples.shape}")
        _check_finite(samples, "motion trace")
        if self.rate <= 0:
            raise DataError(f"motion rate must be positive, got {self.rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass(frozen=True)
class FeatureSequence:
    """T x F frame matrix at a fixed frame rate (MFCC frames or motion samples)."""

    frames: np.ndarray
    frame_rate: float
    modality: str

    _WIDTHS = {AUDIO_MFCC: 20, MOTION: 6}

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DataError(f"feature frames must be a TxF matrix with T >= 1, got shape {frames.shape}")
        expected = self._WIDTHS.get(self.modality)
        if expected is None:
            raise DataError(f"unknown modality {self.modality!r}")
        if frames.shape[1] != expected:
            raise DataError(
                f"{self.modality} features must have {expected} channels, got {frames.shape[1]}"
            )
        _check_finite(frames, "feature sequence")
        if self.frame_rate <= 0:
            raise DataError(f"frame rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    """MFCC extraction parameters: 32 ms windows, 20 ms hop, 20 coefficients.

    The 0th cepstral coefficient is retained; drop it by slicing downstream
    if per-frame loudness should be excluded.
    """

    target_rate: int = 16000
    window_len: float = 0.032
    hop: float = 0.020
    n_mels: int = 26
    n_coeffs: int = 20
    fft_size: int = 512
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window_len * self.target_rate > self.fft_size:
            raise ConfigError(
                f"window of {self.window_len * self.target_rate:.0f} samples exceeds fft_size {self.fft_size}"
            )
        if self.n_coeffs > self.n_mels:
            raise ConfigError(f"n_coeffs ({self.n_coeffs}) must not exceed n_mels ({self.n_mels})")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_len * self.target_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.target_rate))

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.hop


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Downsample a waveform with a windowed-sinc anti-aliasing low-pass.

    Rational polyphase resampling (e.g. 44100 -> 16000 is down 441, up 160);
    only downsampling (or identity) is supported.
    """
    if w.rate < target_rate:
        raise ConfigError(
            f"upsampling not supported: input rate {w.rate} < target rate {target_rate}"
        )
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if w.rate == target_rate:
        return Waveform(w.samples.copy(), float(target_rate))
    if not float(w.rate).is_integer() or not float(target_rate).is_integer():
        raise ConfigError("resampling requires integer sample rates")
    src, dst = int(w.rate), int(target_rate)
    g = math.gcd(src, dst)
    up, down = dst // g, src // g
    out = sp_signal.resample_poly(w.samples, up, down)
    return Waveform(out, float(target_rate))


def pad_center(x, target_duration: float):
    """Zero-pad a Waveform or MotionTrace symmetrically to a target duration.

    The original samples stay contiguous; with an odd total pad the extra
    zero goes on the right. Inputs longer than the target are refused.
    """
    n = len(x.samples)
    target_len = int(round(target_duration * x.rate))
    if n > target_len:
        raise DataError(
            f"refusing to truncate: input of {n} samples ({x.duration:.3f}s) exceeds "
            f"target of {target_len} samples ({target_duration:.3f}s)"
        )
    total = target_len - n
    left = total // 2
    right = total - left
    if isinstance(x, Waveform):
        padded = np.concatenate([np.zeros(left), x.samples, np.zeros(right)])
        return Waveform(padded, x.rate)
    if isinstance(x, MotionTrace):
        padded = np.concatenate(
            [np.zeros((left, 6)), x.samples, np.zeros((right, 6))], axis=0
        )
        return MotionTrace(padded, x.rate)
    raise ConfigError(f"pad_center expects Waveform or MotionTrace, got {type(x).__name__}")


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of full analysis windows: floor((n - window) / hop) + 1."""
    if n_samples < window:
        raise DataError(f"signal of {n_samples} samples is shorter than one {window}-sample window")
    return (n_samples - window) // hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, rate: int) -> np.ndarray:
    """Triangular mel filters spanning 0..rate/2, evaluated at rfft bin centers.

    Returns an (n_mels, fft_size // 2 + 1) weight matrix.
    """
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)
    bin_freqs = np.arange(fft_size // 2 + 1) * rate / fft_size
    bank = np.zeros((n_mels, len(bin_freqs)))
    for j in range(n_mels):
        lo, mid, hi = hz_edges[j], hz_edges[j + 1], hz_edges[j + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        bank[j] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def filter_center_freqs(n_mels: int, rate: int) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_edges[1:-1])


def _frames(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    t = frame_count(len(samples), window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    return samples[idx]


def mel_spectrogram(w: Waveform, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Log mel-filterbank energies, one row per frame.

    Pipeline: Hann window -> magnitude spectrum -> mel filterbank ->
    log(. + log_floor).
    """
    if w.rate != cfg.target_rate:
        raise ConfigError(f"waveform rate {w.rate} does not match configured rate {cfg.target_rate}")
    win = cfg.window_samples
    frames = _frames(w.samples, win, cfg.hop_samples) * np.hanning(win)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    mel = spectrum @ mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.target_rate).T
    return np.log(mel + cfg.log_floor)


def mfcc(w: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureSequence:
    """Extract MFCC features: log-mel energies decorrelated by an orthonormal
    DCT-II, keeping the first n_coeffs coefficients."""
    logmel = mel_spectrogram(w, cfg)
    coeffs = sp_fft.dct(logmel, type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs]
    return FeatureSequence(coeffs, cfg.frame_rate, AUDIO_MFCC)


def motion_features(m: MotionTrace) -> FeatureSequence:
    """Wrap raw motion samples as a feature sequence (no transform)."""
    return FeatureSequence(m.samples, m.rate, MOTION)


def align(a: FeatureSequence, b: FeatureSequence) -> tuple[FeatureSequence, FeatureSequence]:
    """Truncate both sequences (from the end) to their common length."""
    if a.frame_rate != b.frame_rate:
        raise DataError(f"cannot align sequences at different frame rates ({a.frame_rate} vs {b.frame_rate})")
    t = min(a.n_frames, b.n_frames)
    return (
        FeatureSequence(a.frames[:t], a.frame_rate, a.modality),
        FeatureSequence(b.frames[:t], b.frame_rate, b.modality),
    )


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and standard deviation, computed on training data only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise DataError("channel stats must be 1-D arrays of equal length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def compute_channel_stats(sequences: list[FeatureSequence]) -> ChannelStats:
    """Pool frames across sequences; zero-variance channels get std 1."""
    if not sequences:
        raise DataError("cannot compute channel stats from an empty sequence list")
    stacked = np.concatenate([s.frames for s in sequences], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return ChannelStats(mean, std)


def standardize(x: FeatureSequence, stats: ChannelStats) -> FeatureSequence:
    """Apply (value - mean) / std per channel; shape unchanged."""
    if stats.mean.shape[0] != x.n_channels:
        raise DataError(
            f"stats have {stats.mean.shape[0]} channels but sequence has {x.n_channels}"
        )
    frames = (x.frames - stats.mean) / stats.std
    return FeatureSequence(frames, x.frame_rate, x.modality)
