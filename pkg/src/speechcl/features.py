"""Log-mel filterbank extraction and cepstral mean/variance normalization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import dsp

LOG_FLOOR = 1e-10
CMVN_VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class FrontendConfig:
    """Parameters of the waveform-to-features frontend."""

    n_mels: int = 80
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_fft: int | None = None  # next power of two >= frame length when None
    window: str = "povey"
    pre_emphasis: float = dsp.DEFAULT_PRE_EMPHASIS
    mel_low_hz: float = 20.0
    mel_high_hz: float | None = None  # Nyquist when None
    cmvn: str = "utterance"  # "utterance" | "speaker" | "off"

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if self.cmvn not in ("utterance", "speaker", "off"):
            raise ValueError(f"unknown cmvn mode {self.cmvn!r}")


@dataclass
class FeatureMatrix:
    """T x F frame sequence with frame timing and identity metadata."""

    values: np.ndarray
    frame_shift_ms: float
    utterance_id: str = ""
    speaker_id: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {self.values.shape}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    def copy_with(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(values, self.frame_shift_ms, self.utterance_id, self.speaker_id)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int, low_hz: float = 20.0, high_hz: float | None = None) -> np.ndarray:
    """Triangular mel filters over rFFT bins, shape (n_mels, n_fft//2 + 1).

    Filters are built on continuous bin frequencies, so each row is
    non-negative and unimodal and center frequencies strictly increase.
    """
    if high_hz is None:
        high_hz = sample_rate_hz / 2.0
    if not 0 <= low_hz < high_hz <= sample_rate_hz / 2.0:
        raise ValueError(f"bad mel band edges [{low_hz}, {high_hz}] for rate {sample_rate_hz}")
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise ValueError(f"n_mels {n_mels} exceeds the {n_bins} FFT bins available")
    mel_points = np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins, dtype=np.float64) * sample_rate_hz / n_fft
    left, center, right = hz_points[:-2], hz_points[1:-1], hz_points[2:]
    up = (bin_freqs[None, :] - left[:, None]) / (center - left)[:, None]
    down = (right[:, None] - bin_freqs[None, :]) / (right - center)[:, None]
    return np.maximum(0.0, np.minimum(up, down))


def fbank(w: dsp.Waveform, cfg: FrontendConfig = FrontendConfig(), utterance_id: str = "", speaker_id: str | None = None) -> FeatureMatrix:
    """Log-mel filterbank energies: |STFT|^2 -> mel filters -> ln with floor."""
    spec = dsp.stft(
        w,
        frame_length_ms=cfg.frame_length_ms,
        frame_shift_ms=cfg.frame_shift_ms,
        n_fft=cfg.n_fft,
        window=cfg.window,
        pre_emphasis_coeff=cfg.pre_emphasis,
    )
    power = np.abs(spec.frames) ** 2
    filters = mel_filterbank(cfg.n_mels, spec.n_fft, w.sample_rate_hz, cfg.mel_low_hz, cfg.mel_high_hz)
    energies = power @ filters.T
    values = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureMatrix(values, cfg.frame_shift_ms, utterance_id, speaker_id)


# ---------------------------------------------------------------------------
# CMVN


@dataclass
class CmvnStats:
    """Running per-channel first and second moments, keyed by speaker."""

    sums: dict = field(default_factory=dict)
    sumsqs: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def add(self, f: FeatureMatrix) -> None:
        key = _speaker_key(f)
        x = f.values
        if key not in self.counts:
            self.sums[key] = np.zeros(x.shape[1])
            self.sumsqs[key] = np.zeros(x.shape[1])
            self.counts[key] = 0
        self.sums[key] += x.sum(axis=0)
        self.sumsqs[key] += (x * x).sum(axis=0)
        self.counts[key] += x.shape[0]

    def merge(self, other: "CmvnStats") -> "CmvnStats":
        out = CmvnStats({k: v.copy() for k, v in self.sums.items()},
                        {k: v.copy() for k, v in self.sumsqs.items()},
                        dict(self.counts))
        for key in other.counts:
            if key in out.counts:
                out.sums[key] += other.sums[key]
                out.sumsqs[key] += other.sumsqs[key]
                out.counts[key] += other.counts[key]
            else:
                out.sums[key] = other.sums[key].copy()
                out.sumsqs[key] = other.sumsqs[key].copy()
                out.counts[key] = other.counts[key]
        return out

    def mean_var(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        if key not in self.counts or self.counts[key] == 0:
            raise LookupError(f"no CMVN statistics for speaker {key!r}")
        n = self.counts[key]
        mean = self.sums[key] / n
        var = self.sumsqs[key] / n - mean * mean
        return mean, np.maximum(var, 0.0)


def _speaker_key(f: FeatureMatrix) -> str:
    return f.speaker_id if f.speaker_id is not None else f.utterance_id


def accumulate_cmvn(features: Iterable[FeatureMatrix]) -> CmvnStats:
    """Fold per-speaker sums over a stream of feature matrices."""
    stats = CmvnStats()
    for f in features:
        stats.add(f)
    return stats


def apply_cmvn(f: FeatureMatrix, stats: CmvnStats) -> FeatureMatrix:
    """Per-channel (x - mean) / sqrt(var + eps) using the matrix's speaker stats."""
    mean, var = stats.mean_var(_speaker_key(f))
    values = (f.values - mean) / np.sqrt(var + CMVN_VARIANCE_FLOOR)
    return f.copy_with(values)


def normalize_per_utterance(f: FeatureMatrix) -> FeatureMatrix:
    """CMVN against the matrix's own statistics (the no-speaker fallback)."""
    stats = CmvnStats()
    stats.add(f)
    return apply_cmvn(f, stats)
