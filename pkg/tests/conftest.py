import numpy as np
import pytest

from speechcl.dsp import Waveform, sine


@pytest.fixture
def tone() -> Waveform:
    return sine(440.0, 1.0, 16000)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def fft_peak_hz(w: Waveform, pad: int = 1 << 18) -> float:
    """Dominant frequency of a waveform via a zero-padded windowed FFT."""
    x = w.samples.astype(np.float64) * np.hanning(len(w))
    spec = np.abs(np.fft.rfft(x, pad))
    return float(np.argmax(spec) * w.sample_rate_hz / pad)
