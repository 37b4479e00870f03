"""Waveform container, WAV file I/O, resampling, STFT and convolution.

Conventions: mono float32 storage in [-1, 1], 64-bit arithmetic inside every
operation, Kaldi-style snip-edges framing (frames that would run past the
signal end are dropped).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

DEFAULT_PRE_EMPHASIS = 0.97

# Windowed-sinc interpolation table: half-width in zero crossings and the
# number of table points per crossing.  Shared by resample / speed / pitch.
_SINC_HALF_WIDTH = 8
_SINC_OVERSAMPLE = 128


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedWavError(ValueError):
    """Structurally valid WAV whose codec or layout is not handled."""


@dataclass(frozen=True)
class Waveform:
    """Mono PCM audio: float64 samples in [-1, 1] at a fixed rate.

    Stored at full precision so the linearity bounds of resampling and
    convolution are not drowned by storage quantization.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Framed complex STFT: frames[t, k] for T frames and n_fft//2+1 bins."""

    frames: np.ndarray
    frame_shift_samples: int
    frame_length_samples: int
    n_fft: int
    padding: str = field(default="snip-edges")


def sine(freq_hz: float, duration_s: float, sample_rate_hz: int, amplitude: float = 0.5) -> Waveform:
    """Generate a pure sine tone (handy for tests and calibration)."""
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n, dtype=np.float64) / sample_rate_hz
    return Waveform(amplitude * np.sin(2.0 * np.pi * freq_hz * t), sample_rate_hz)


# ---------------------------------------------------------------------------
# WAV I/O

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM16 or IEEE float32, any channel count).

    Multichannel audio is downmixed by channel mean; PCM16 is scaled by
    1/32768.  Raises WavFormatError with a byte offset on malformed
    containers and UnsupportedWavError on unhandled codecs.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise WavFormatError("file too short for a RIFF header", 0)
    if blob[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF magic", 0)
    if blob[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE form type", 8)

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body_start = pos + 8
        if body_start + size > len(blob):
            raise WavFormatError(f"chunk {cid!r} overruns file", pos)
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes", pos)
            fmt = struct.unpack_from("<HHIIHH", blob, body_start)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and size >= 40:
                (sub,) = struct.unpack_from("<H", blob, body_start + 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = blob[body_start : body_start + size]
        pos = body_start + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError("no fmt chunk found", len(blob))
    if data is None:
        raise WavFormatError("no data chunk found", len(blob))

    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1:
        raise WavFormatError("zero channels", 0)
    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % (2 * channels)], dtype="<i2")
        x = raw.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % (4 * channels)], dtype="<f4")
        x = raw.astype(np.float64)
    else:
        raise UnsupportedWavError(f"unsupported codec: format tag {audio_format}, {bits} bits per sample")

    if channels > 1:
        x = x[: len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)
    return Waveform(x, rate)


def write_wav(w: Waveform, path) -> None:
    """Write a waveform as PCM16 RIFF/WAVE; values are clipped to [-1, 1]."""
    x = np.clip(w.samples.astype(np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_PCM,
        1,
        w.sample_rate_hz,
        w.sample_rate_hz * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# ---------------------------------------------------------------------------
# resampling


_SINC_PROTOTYPE: np.ndarray | None = None


def _sinc_prototype() -> np.ndarray:
    """Hann-windowed sinc sampled at _SINC_OVERSAMPLE points per zero crossing.

    One table serves every cutoff: the kernel for cutoff fc is
    fc * table[|t| * fc * oversample], zero beyond the half width.
    """
    global _SINC_PROTOTYPE
    if _SINC_PROTOTYPE is None:
        h, ov = _SINC_HALF_WIDTH, _SINC_OVERSAMPLE
        u = np.arange(h * ov + ov + 4, dtype=np.float64) / ov
        k = np.sinc(u) * (0.5 + 0.5 * np.cos(np.pi * np.minimum(u / h, 1.0)))
        k[u >= h] = 0.0
        _SINC_PROTOTYPE = k
    return _SINC_PROTOTYPE


def _resample_ratio(x: np.ndarray, ratio: float) -> np.ndarray:
    """Band-limited resampling of x by out/in ratio; output length round(n*ratio)."""
    n_in = len(x)
    n_out = int(round(n_in * ratio))
    if n_out == 0 or n_in == 0:
        return np.zeros(n_out, dtype=np.float64)
    table = _sinc_prototype()
    cutoff = min(1.0, ratio) * 0.945  # keep the transition band below Nyquist
    half_span = _SINC_HALF_WIDTH / cutoff

    centers = np.arange(n_out, dtype=np.float64) / ratio
    first = np.ceil(centers - half_span).astype(np.int64)
    n_taps = int(np.floor(2.0 * half_span)) + 1
    idx = first[:, None] + np.arange(n_taps)[None, :]
    offsets = np.abs(idx - centers[:, None]) * (cutoff * _SINC_OVERSAMPLE)
    lo = offsets.astype(np.int64)
    frac = offsets - lo
    weights = (table[lo] * (1.0 - frac) + table[lo + 1] * frac) * cutoff
    valid = (idx >= 0) & (idx < n_in)
    gathered = np.where(valid, np.asarray(x, dtype=np.float64)[np.clip(idx, 0, n_in - 1)], 0.0)
    return np.einsum("ij,ij->i", gathered, weights)


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Resample with windowed-sinc interpolation; identity when rates match."""
    if target_rate_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate_hz}")
    if target_rate_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    y = _resample_ratio(w.samples, target_rate_hz / w.sample_rate_hz)
    return Waveform(y, target_rate_hz)


# ---------------------------------------------------------------------------
# STFT

_WINDOWS = ("hamming", "hann", "povey")


def window_function(name: str, length: int) -> np.ndarray:
    """Periodic-symmetric analysis window by name."""
    if length == 1:
        return np.ones(1)
    n = np.arange(length, dtype=np.float64)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))
    if name == "povey":
        return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))) ** 0.85
    raise ValueError(f"unknown window {name!r}; expected one of {_WINDOWS}")


def pre_emphasis(x: np.ndarray, coeff: float) -> np.ndarray:
    """First-order high-pass y[n] = x[n] - coeff*x[n-1] (y[0] = (1-coeff)*x[0])."""
    x = np.asarray(x, dtype=np.float64)
    if coeff == 0.0 or x.size == 0:
        return x.copy()
    y = np.empty_like(x)
    y[0] = x[0] - coeff * x[0]
    y[1:] = x[1:] - coeff * x[:-1]
    return y


def frame_signal(x: np.ndarray, frame_length: int, frame_shift: int) -> np.ndarray:
    """Snip-edges framing: T = floor((n - frame_length)/frame_shift) + 1."""
    n = len(x)
    if n < frame_length:
        return np.empty((0, frame_length), dtype=np.float64)
    num = (n - frame_length) // frame_shift + 1
    view = np.lib.stride_tricks.sliding_window_view(x, frame_length)[:: frame_shift]
    return np.array(view[:num], dtype=np.float64)


def stft(
    w: Waveform,
    frame_length_ms: float = 25.0,
    frame_shift_ms: float = 10.0,
    n_fft: int | None = None,
    window: str = "povey",
    pre_emphasis_coeff: float = DEFAULT_PRE_EMPHASIS,
) -> ComplexSpectrogram:
    """Per-frame windowed real FFT.  A too-short waveform yields T = 0."""
    if frame_shift_ms <= 0 or frame_length_ms < frame_shift_ms:
        raise ValueError(f"need frame_length >= frame_shift > 0, got {frame_length_ms}/{frame_shift_ms} ms")
    frame_length = int(round(frame_length_ms * w.sample_rate_hz / 1000.0))
    frame_shift = int(round(frame_shift_ms * w.sample_rate_hz / 1000.0))
    if n_fft is None:
        n_fft = 1
        while n_fft < frame_length:
            n_fft *= 2
    if n_fft < frame_length:
        raise ValueError(f"n_fft {n_fft} smaller than frame length {frame_length}")
    x = pre_emphasis(w.samples, pre_emphasis_coeff)
    frames = frame_signal(x, frame_length, frame_shift)
    win = window_function(window, frame_length)
    spec = scipy.fft.rfft(frames * win, n=n_fft, axis=1)
    return ComplexSpectrogram(spec, frame_shift, frame_length, n_fft)


# ---------------------------------------------------------------------------
# convolution

_DIRECT_CONV_MAX_KERNEL = 128


def convolve(w: Waveform, kernel, method: str = "auto") -> Waveform:
    """Linear convolution truncated to the input length (tail dropped).

    method: "direct", "fft" or "auto" (direct for short kernels).
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size == 0:
        raise ValueError("kernel must be a non-empty 1-D sequence")
    x = w.samples.astype(np.float64)
    n = len(x)
    if n == 0:
        return Waveform(x, w.sample_rate_hz)
    if method == "auto":
        method = "direct" if kernel.size <= _DIRECT_CONV_MAX_KERNEL else "fft"
    if method == "direct":
        y = np.convolve(x, kernel, mode="full")[:n]
    elif method == "fft":
        size = scipy.fft.next_fast_len(n + kernel.size - 1)
        y = scipy.fft.irfft(scipy.fft.rfft(x, size) * scipy.fft.rfft(kernel, size), size)[:n]
    else:
        raise ValueError(f"unknown convolution method {method!r}")
    return Waveform(y, w.sample_rate_hz)


def crc32_bytes(blob: bytes) -> int:
    """CRC32 as used by the named-tensor container."""
    return zlib.crc32(blob) & 0xFFFFFFFF
