"""Clip-level speech features: 40 MFCC, 128 log-mel bands and 12 chroma bins.

Each statistic is computed per STFT frame and averaged over frames, giving a
180-long vector per clip (mfcc, then mel, then chroma).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .errors import SchemaError

N_MFCC = 40
N_MELS = 128
N_CHROMA = 12
FEATURE_LENGTH = N_MFCC + N_MELS + N_CHROMA
PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 22050
    frame_length: int = 2048
    hop: int = 512
    n_mels: int = N_MELS
    n_mfcc: int = N_MFCC
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_length <= 0 or self.frame_length & (self.frame_length - 1):
            raise SchemaError(f"frame_length must be a power of two, got {self.frame_length}")
        if self.hop <= 0 or self.sample_rate <= 0 or self.log_floor <= 0:
            raise SchemaError("hop, sample_rate and log_floor must be positive")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise SchemaError("need 0 < n_mfcc <= n_mels")
        if not 0 <= self.fmin < self.upper_frequency <= self.sample_rate / 2:
            raise SchemaError("need 0 <= fmin < fmax <= sample_rate / 2")

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = DspConfig()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def fft_frequencies(config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    return np.arange(config.frame_length // 2 + 1) * config.sample_rate / config.frame_length


@lru_cache(maxsize=16)
def _mel_filterbank(sample_rate, frame_length, n_mels, fmin, fmax) -> np.ndarray:
    freqs = np.arange(frame_length // 2 + 1) * sample_rate / frame_length
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_filterbank(config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Peak-one triangular filters on the HTK mel scale, shape (n_mels, n_bins).

    Neighbouring triangles cross at half height, so the weights on any FFT bin
    sum to at most one.
    """
    return _mel_filterbank(config.sample_rate, config.frame_length, config.n_mels, config.fmin, config.upper_frequency)


def frame_signal(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise SchemaError("expected a 1-D sample array")
    if len(samples) < config.frame_length:
        raise SchemaError(f"need at least {config.frame_length} samples, got {len(samples)}")
    return np.lib.stride_tricks.sliding_window_view(samples, config.frame_length)[:: config.hop]


def power_spectrogram(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    """|rfft|^2 of Hann-windowed frames, shape (n_frames, frame_length // 2 + 1)."""
    frames = frame_signal(samples, config) * np.hanning(config.frame_length + 1)[:-1]
    spec = np.fft.rfft(frames, axis=1)
    return spec.real**2 + spec.imag**2


def _log_mel_frames(power: np.ndarray, config: DspConfig) -> np.ndarray:
    energies = power @ mel_filterbank(config).T
    return 10.0 * np.log10(np.maximum(energies, config.log_floor))


def _chroma_from_power(power: np.ndarray, config: DspConfig) -> np.ndarray:
    freqs = fft_frequencies(config)[1:]
    classes = (np.rint(12.0 * np.log2(freqs / 440.0)).astype(int) + 9) % 12
    assign = np.zeros((len(freqs), N_CHROMA))
    assign[np.arange(len(freqs)), classes] = 1.0
    per_class = (power[:, 1:] @ assign).mean(axis=0)
    peak = per_class.max()
    if peak <= 0:
        return np.zeros(N_CHROMA)
    return per_class / peak


def mel_spectrogram(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    return _log_mel_frames(power_spectrogram(samples, config), config).mean(axis=0)


def mfcc(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    log_mel = _log_mel_frames(power_spectrogram(samples, config), config)
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_mfcc].mean(axis=0)


def chroma(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Pitch-class energy profile in C..B order, scaled so the largest class is 1."""
    return _chroma_from_power(power_spectrogram(samples, config), config)


def speech_feature_vector(samples, config: DspConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Concatenated mfcc, mel and chroma statistics of one clip.

    One STFT is shared by the three statistics, which is why this is not
    written as three calls to the public functions.
    """
    power = power_spectrogram(samples, config)
    log_mel = _log_mel_frames(power, config)
    parts = (
        dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_mfcc].mean(axis=0),
        log_mel.mean(axis=0),
        _chroma_from_power(power, config),
    )
    out = np.concatenate(parts)
    if not np.all(np.isfinite(out)):
        raise SchemaError("speech features contain non-finite values")
    return out
