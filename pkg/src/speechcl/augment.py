"""Stochastic waveform and spectrogram augmentations producing paired views.

Waveform chain: pitch shift -> speed perturbation -> room reverberation ->
additive noise.  Spectrogram chain (after the feature frontend): time mask ->
frequency mask.  Every operation takes an explicit numpy Generator, so the
whole chain is reproducible from a seed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft
import scipy.signal
from scipy.signal import lfilter

from .dsp import Waveform, read_wav, resample
from .features import FeatureMatrix


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges and switches for the augmentation chain."""

    pitch_cents_range: tuple[int, int] = (-300, 300)
    speed_range: tuple[float, float] = (0.8, 1.2)
    snr_db_range: tuple[float, float] = (5.0, 10.0)
    reverberance_pct: float = 50.0
    damping_pct: float = 50.0
    room_scale_range: tuple[float, float] = (0.0, 100.0)
    time_mask_max_frames: int = 40
    freq_mask_max_channels: int = 10
    time_mask_count: int = 1
    freq_mask_count: int = 1
    enable_pitch: bool = True
    enable_speed: bool = True
    enable_reverb: bool = True
    enable_noise: bool = True
    enable_time_mask: bool = True
    enable_freq_mask: bool = True

    def __post_init__(self):
        for name in ("pitch_cents_range", "speed_range", "snr_db_range", "room_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} low {lo} exceeds high {hi}")
        if self.time_mask_max_frames < 0 or self.freq_mask_max_channels < 0:
            raise ValueError("mask maxima must be >= 0")
        for pct in (self.reverberance_pct, self.damping_pct):
            if not 0.0 <= pct <= 100.0:
                raise ValueError(f"reverb percentages must lie in [0, 100], got {pct}")

    def disabled(self, name: str) -> "AugmentConfig":
        """Copy of the config with one named augmentation switched off."""
        flag = f"enable_{name}"
        if not hasattr(self, flag):
            raise ValueError(f"unknown augmentation toggle {name!r}")
        return replace(self, **{flag: False})


AUGMENTATION_NAMES = ("pitch", "speed", "reverb", "noise", "time_mask", "freq_mask")


def derive_seed(*tokens) -> int:
    """Stable 64-bit seed from arbitrary tokens (independent of PYTHONHASHSEED)."""
    h = hashlib.blake2b(digest_size=8)
    for t in tokens:
        h.update(str(t).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_rng(*tokens) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*tokens))


# ---------------------------------------------------------------------------
# pitch and speed


def _stretch_time(x: np.ndarray, factor: float) -> np.ndarray:
    """Phase-vocoder time stretch: length scales by factor, pitch unchanged.

    Float32 internally; the callers are stochastic augmentations whose
    tolerances are far looser than single precision.
    """
    n = len(x)
    if factor == 1.0 or n == 0:
        return np.asarray(x, dtype=np.float64).copy()
    n_fft = 1024
    while n_fft > max(32, n // 2):
        n_fft //= 2
    hop = n_fft // 4
    win = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)).astype(np.float32)

    frames = np.lib.stride_tricks.sliding_window_view(
        np.pad(np.asarray(x, dtype=np.float32), (0, n_fft)), n_fft
    )[::hop]
    n_frames = len(frames)
    spec = scipy.fft.rfft(frames * win, axis=1)
    if n_frames < 2:
        return np.asarray(x, dtype=np.float64).copy()

    steps = np.arange(0.0, n_frames - 1, 1.0 / factor)
    base = np.floor(steps).astype(np.int64)
    frac = (steps - base).astype(np.float32)[:, None]
    mag = np.abs(spec)
    angles = np.angle(spec).astype(np.float32)
    mags = (1.0 - frac) * mag[base] + frac * mag[base + 1]

    bin_advance = (2.0 * np.pi * hop * np.arange(spec.shape[1]) / n_fft).astype(np.float32)
    phase_step = angles[base + 1] - angles[base] - bin_advance
    phase_step -= (2.0 * np.pi * np.round(phase_step / (2.0 * np.pi))).astype(np.float32)
    phase_step += bin_advance
    phases = angles[0] + np.concatenate(
        [np.zeros((1, spec.shape[1]), dtype=np.float32), np.cumsum(phase_step[:-1], axis=0)]
    )

    out_frames = scipy.fft.irfft(mags * (np.cos(phases) + 1j * np.sin(phases)), n=n_fft, axis=1) * win
    n_out_frames = len(out_frames)
    total = hop * (n_out_frames - 1) + n_fft
    y = np.zeros(total, dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    win_sq = (win * win).astype(np.float64)
    for t in range(n_out_frames):
        y[t * hop : t * hop + n_fft] += out_frames[t]
        norm[t * hop : t * hop + n_fft] += win_sq
    y /= np.maximum(norm, 1e-8)

    target = int(round(n * factor))
    if len(y) >= target:
        return y[:target]
    return np.pad(y, (0, target - len(y)))


def pitch_shift(w: Waveform, cents: int) -> Waveform:
    """Shift pitch by `cents` while preserving duration.

    Time-stretch by 2^(cents/1200), then resample back to the original
    length so only the pitch moves.
    """
    if abs(cents) > 1200:
        raise ValueError(f"pitch shift limited to +-1200 cents, got {cents}")
    if cents == 0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    ratio = 2.0 ** (cents / 1200.0)
    stretched = _stretch_time(w.samples, ratio)
    # Fourier resampling back to the original length: a single band-limited
    # step, much cheaper than time-domain interpolation at this ratio.
    shifted = scipy.signal.resample(stretched, len(w))
    return Waveform(shifted, w.sample_rate_hz)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Sox-style speed change: duration scales by 1/factor, pitch by factor."""
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"speed factor must lie in [0.5, 2.0], got {factor}")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    return Waveform(scipy.signal.resample(w.samples.astype(np.float64), int(round(len(w) / factor))), w.sample_rate_hz)


# ---------------------------------------------------------------------------
# additive noise


class NoiseBank:
    """WAV clips loaded from a directory in lexicographic filename order."""

    def __init__(self, clips: list[Waveform]):
        self.clips = clips
        self._resampled: dict[tuple[int, int], Waveform] = {}

    @classmethod
    def from_dir(cls, path) -> "NoiseBank":
        files = sorted(Path(path).glob("*.wav"))
        clips = [read_wav(f) for f in files]
        if any(len(c) < 1 for c in clips):
            raise ValueError(f"noise bank {path} contains an empty clip")
        return cls(clips)

    def __len__(self) -> int:
        return len(self.clips)

    def sample(self, rng: np.random.Generator, sample_rate_hz: int | None = None) -> Waveform:
        """Uniformly pick a clip, resampled (and cached) to the requested rate."""
        if not self.clips:
            raise ValueError("noise bank is empty")
        idx = int(rng.integers(0, len(self.clips)))
        clip = self.clips[idx]
        if sample_rate_hz is None or clip.sample_rate_hz == sample_rate_hz:
            return clip
        key = (idx, sample_rate_hz)
        if key not in self._resampled:
            self._resampled[key] = resample(clip, sample_rate_hz)
        return self._resampled[key]


def add_noise(w: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator) -> tuple[Waveform, bool]:
    """Mix noise at a target SNR; returns (mixture, scaled_flag).

    The noise is tiled from a random start offset to the speech length and
    scaled so 10*log10(P_speech / P_noise) equals snr_db.  Zero-power speech
    (or noise) skips the mix and returns the input with scaled_flag False.
    """
    if len(noise) == 0:
        raise ValueError("noise clip is empty")
    if noise.sample_rate_hz != w.sample_rate_hz:
        noise = resample(noise, w.sample_rate_hz)
    x = w.samples.astype(np.float64)
    n = len(x)
    if n == 0:
        return Waveform(x, w.sample_rate_hz), False
    offset = int(rng.integers(0, len(noise)))
    seg = np.take(noise.samples.astype(np.float64), (offset + np.arange(n)) % len(noise))
    p_speech = float(np.mean(x * x))
    p_noise = float(np.mean(seg * seg))
    if p_speech == 0.0 or p_noise == 0.0:
        return Waveform(x, w.sample_rate_hz), False
    scale = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(x + scale * seg, w.sample_rate_hz), True


# ---------------------------------------------------------------------------
# room reverberation (Freeverb topology, sox-style parameter semantics)

_COMB_DELAYS_44K = (1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617)
_ALLPASS_DELAYS_44K = (556, 441, 341, 225)
_ALLPASS_FEEDBACK = 0.5
_INPUT_GAIN = 0.015

_ir_cache: dict[tuple, np.ndarray] = {}
_ir_spec_cache: dict[tuple, np.ndarray] = {}


def _comb_filter(x: np.ndarray, delay: int, feedback: float, damp: float) -> np.ndarray:
    """Feedback comb with a one-pole lowpass in the loop, evaluated blockwise."""
    damp2 = 1.0 - damp
    n = len(x)
    out = np.zeros(n)
    written = np.zeros(n)
    zi = np.zeros(1)
    for s in range(0, n, delay):
        e = min(s + delay, n)
        ob = written[s - delay : e - delay] if s >= delay else np.zeros(e - s)
        fs, zi = lfilter([damp2], [1.0, -damp], ob, zi=zi)
        written[s:e] = x[s:e] + feedback * fs
        out[s:e] = ob
    return out


def _allpass_filter(x: np.ndarray, delay: int, feedback: float = _ALLPASS_FEEDBACK) -> np.ndarray:
    n = len(x)
    out = np.zeros(n)
    written = np.zeros(n)
    for s in range(0, n, delay):
        e = min(s + delay, n)
        ob = written[s - delay : e - delay] if s >= delay else np.zeros(e - s)
        written[s:e] = x[s:e] + feedback * ob
        out[s:e] = -x[s:e] + ob
    return out


def _reverb_feedback(reverberance_pct: float) -> float:
    """Map reverberance 0..100 to comb feedback 0.30..0.98 (sox crossfade curve)."""
    a = -1.0 / math.log(1.0 - 0.3)
    b = 100.0 / (a * math.log(1.0 - 0.98) + 1.0)
    return 1.0 - math.exp((reverberance_pct - b) / (a * b))


_ROOM_SCALE_LEVELS = 128  # delay-line resolution; keeps the IR cache bounded


def _reverb_ir_key(n: int, sample_rate_hz: int, feedback: float, damp: float, room_scale_pct: float) -> tuple:
    quantized = round(room_scale_pct / 100.0 * (_ROOM_SCALE_LEVELS - 1)) / (_ROOM_SCALE_LEVELS - 1) * 100.0
    scale = (0.1 + 0.9 * quantized / 100.0) * sample_rate_hz / 44100.0
    combs = tuple(max(2, int(round(d * scale))) for d in _COMB_DELAYS_44K)
    allpasses = tuple(max(2, int(round(d * scale))) for d in _ALLPASS_DELAYS_44K)
    return (combs, allpasses, round(feedback, 9), round(damp, 9))


def _reverb_impulse_response(n: int, sample_rate_hz: int, feedback: float, damp: float, room_scale_pct: float) -> np.ndarray:
    key = _reverb_ir_key(n, sample_rate_hz, feedback, damp, room_scale_pct)
    cached = _ir_cache.get(key)
    if cached is not None and len(cached) >= n:
        return cached[:n]
    combs, allpasses = key[0], key[1]
    impulse = np.zeros(n)
    impulse[0] = _INPUT_GAIN
    wet = np.zeros(n)
    for d in combs:
        wet += _comb_filter(impulse, d, feedback, damp)
    for d in allpasses:
        wet = _allpass_filter(wet, d)
    wet = wet.astype(np.float32)  # wet-path precision is far beyond audibility
    _ir_cache[key] = wet
    return wet


def reverberate(w: Waveform, reverberance_pct: float, damping_pct: float, room_scale_pct: float) -> Waveform:
    """Freeverb-style reverb; output has the input's length.

    reverberance drives comb feedback and the wet gain, damping the in-loop
    lowpass, room scale the delay-line lengths.  reverberance 0 is the dry
    signal.
    """
    for name, val in (("reverberance", reverberance_pct), ("damping", damping_pct), ("room scale", room_scale_pct)):
        if not 0.0 <= val <= 100.0:
            raise ValueError(f"{name} must lie in [0, 100], got {val}")
    x = w.samples.astype(np.float64)
    n = len(x)
    if reverberance_pct == 0.0 or n == 0:
        return Waveform(x, w.sample_rate_hz)
    feedback = _reverb_feedback(reverberance_pct)
    damp = 0.2 + 0.3 * damping_pct / 100.0
    ir = _reverb_impulse_response(n, w.sample_rate_hz, feedback, damp, room_scale_pct)
    size = scipy.fft.next_fast_len(2 * n - 1)
    key = _reverb_ir_key(n, w.sample_rate_hz, feedback, damp, room_scale_pct) + (size, n)
    ir_spec = _ir_spec_cache.get(key)
    if ir_spec is None:
        ir_spec = scipy.fft.rfft(ir, size)
        _ir_spec_cache[key] = ir_spec
    wet = scipy.fft.irfft(scipy.fft.rfft(x, size) * ir_spec, size)[:n]
    return Waveform(x + (reverberance_pct / 100.0) * wet, w.sample_rate_hz)


# ---------------------------------------------------------------------------
# spectrogram masks


def spec_time_mask(f: FeatureMatrix, max_width: int, rng: np.random.Generator) -> FeatureMatrix:
    """Zero one contiguous block of Uniform{0..max_width} frames."""
    if max_width < 0:
        raise ValueError(f"max_width must be >= 0, got {max_width}")
    t_total = f.num_frames
    width = min(int(rng.integers(0, max_width + 1)), t_total)
    start = int(rng.integers(0, t_total - width + 1)) if t_total > width else 0
    values = f.values.copy()
    values[start : start + width, :] = 0.0
    return f.copy_with(values)


def spec_freq_mask(f: FeatureMatrix, max_channels: int, rng: np.random.Generator) -> FeatureMatrix:
    """Zero one contiguous block of Uniform{0..max_channels} mel channels."""
    if max_channels < 0:
        raise ValueError(f"max_channels must be >= 0, got {max_channels}")
    f_total = f.num_channels
    width = min(int(rng.integers(0, max_channels + 1)), f_total)
    start = int(rng.integers(0, f_total - width + 1)) if f_total > width else 0
    values = f.values.copy()
    values[:, start : start + width] = 0.0
    return f.copy_with(values)


# ---------------------------------------------------------------------------
# paired views


def _pitch_then_speed(w: Waveform, cents: int, factor: float) -> Waveform:
    """pitch_shift followed by speed_perturb with the two Fourier resampling
    steps composed into one (band-limited resamplers commute, so the result
    matches the two-step chain up to rounding)."""
    ratio = 2.0 ** (cents / 1200.0)
    stretched = _stretch_time(w.samples, ratio) if cents != 0 else w.samples.astype(np.float64)
    out_len = int(round(len(w) / factor))
    if len(stretched) == out_len:
        return Waveform(stretched, w.sample_rate_hz)
    return Waveform(scipy.signal.resample(stretched, out_len), w.sample_rate_hz)


def augment_waveform(w: Waveform, cfg: AugmentConfig, bank: NoiseBank | None, rng: np.random.Generator) -> Waveform:
    """One draw of the waveform-level chain: pitch -> speed -> reverb -> noise."""
    x = w
    if cfg.enable_pitch and cfg.enable_speed:
        lo, hi = cfg.pitch_cents_range
        cents = int(rng.integers(lo, hi + 1))
        slo, shi = cfg.speed_range
        x = _pitch_then_speed(x, cents, float(rng.uniform(slo, shi)))
    elif cfg.enable_pitch:
        lo, hi = cfg.pitch_cents_range
        x = pitch_shift(x, int(rng.integers(lo, hi + 1)))
    elif cfg.enable_speed:
        lo, hi = cfg.speed_range
        x = speed_perturb(x, float(rng.uniform(lo, hi)))
    if cfg.enable_reverb:
        lo, hi = cfg.room_scale_range
        x = reverberate(x, cfg.reverberance_pct, cfg.damping_pct, float(rng.uniform(lo, hi)))
    if cfg.enable_noise:
        if bank is None or len(bank) == 0:
            raise ValueError("additive noise is enabled but the noise bank is empty")
        lo, hi = cfg.snr_db_range
        noise = bank.sample(rng, x.sample_rate_hz)
        x, _ = add_noise(x, noise, float(rng.uniform(lo, hi)), rng)
    return x


def augment_features(f: FeatureMatrix, cfg: AugmentConfig, rng: np.random.Generator) -> FeatureMatrix:
    """One draw of the spectrogram-level chain: time mask(s) -> freq mask(s)."""
    if cfg.enable_time_mask:
        for _ in range(cfg.time_mask_count):
            f = spec_time_mask(f, cfg.time_mask_max_frames, rng)
    if cfg.enable_freq_mask:
        for _ in range(cfg.freq_mask_count):
            f = spec_freq_mask(f, cfg.freq_mask_max_channels, rng)
    return f


def make_views(
    w: Waveform,
    cfg: AugmentConfig,
    bank: NoiseBank | None,
    frontend: Callable[[Waveform], FeatureMatrix],
    rng: np.random.Generator,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Two independently augmented feature views of the same utterance."""
    rng_i, rng_j = rng.spawn(2)

    def one(r: np.random.Generator) -> FeatureMatrix:
        return augment_features(frontend(augment_waveform(w, cfg, bank, r)), cfg, r)

    return one(rng_i), one(rng_j)
