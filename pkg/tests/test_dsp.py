import struct

import numpy as np
import pytest

from speechcl.dsp import (
    ComplexSpectrogram,
    UnsupportedWavError,
    Waveform,
    WavFormatError,
    convolve,
    read_wav,
    resample,
    sine,
    stft,
    window_function,
    write_wav,
)

from conftest import fft_peak_hz


class TestWavIO:
    def test_silence_roundtrip(self, tmp_path):
        path = tmp_path / "silence.wav"
        write_wav(Waveform(np.zeros(16000), 16000), path)
        w = read_wav(path)
        assert len(w) == 16000
        assert w.sample_rate_hz == 16000
        assert np.all(w.samples == 0.0)

    def test_pcm16_min_scales_to_minus_one(self, tmp_path):
        path = tmp_path / "min.wav"
        payload = struct.pack("<h", -32768)
        _write_raw_wav(path, payload, channels=1, rate=8000)
        assert read_wav(path).samples[0] == -1.0

    def test_stereo_mean_downmix(self, tmp_path):
        path = tmp_path / "stereo.wav"
        left = int(round(0.5 * 32768))
        right = int(round(-0.5 * 32768))
        _write_raw_wav(path, struct.pack("<hh", left, right), channels=2, rate=8000)
        w = read_wav(path)
        assert len(w) == 1
        assert abs(w.samples[0]) < 1e-9

    def test_sine_roundtrip_quantization_bound(self, tmp_path, tone):
        path = tmp_path / "tone.wav"
        write_wav(tone, path)
        back = read_wav(path)
        assert np.max(np.abs(back.samples - tone.samples)) <= 1.0 / 32768 + 1e-9

    def test_empty_waveform_roundtrip(self, tmp_path):
        path = tmp_path / "empty.wav"
        write_wav(Waveform(np.zeros(0), 16000), path)
        assert len(read_wav(path)) == 0

    def test_full_scale_clips_to_max(self, tmp_path):
        path = tmp_path / "full.wav"
        write_wav(Waveform(np.array([1.0]), 8000), path)
        with open(path, "rb") as fh:
            data = fh.read()
        (value,) = struct.unpack("<h", data[-2:])
        assert value == 32767

    def test_float32_wav_reads_exactly(self, tmp_path):
        path = tmp_path / "f32.wav"
        samples = np.array([0.25, -0.125, 0.5], dtype="<f4")
        _write_raw_wav(path, samples.tobytes(), channels=1, rate=16000, fmt=3, bits=32)
        w = read_wav(path)
        assert np.array_equal(w.samples, samples)

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"JUNK" + b"\x00" * 64)
        with pytest.raises(WavFormatError) as err:
            read_wav(path)
        assert err.value.offset == 0

    def test_bad_form_type_reports_offset_eight(self, tmp_path):
        path = tmp_path / "bad2.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", 64) + b"JUNK" + b"\x00" * 64)
        with pytest.raises(WavFormatError) as err:
            read_wav(path)
        assert err.value.offset == 8

    def test_unsupported_codec(self, tmp_path):
        path = tmp_path / "ulaw.wav"
        _write_raw_wav(path, b"\x00\x00", channels=1, rate=8000, fmt=7, bits=8)
        with pytest.raises(UnsupportedWavError):
            read_wav(path)

    def test_overrunning_chunk_is_format_error(self, tmp_path):
        path = tmp_path / "trunc.wav"
        blob = b"RIFF" + struct.pack("<I", 1000) + b"WAVE" + b"fmt " + struct.pack("<I", 999)
        path.write_bytes(blob)
        with pytest.raises(WavFormatError):
            read_wav(path)


class TestResample:
    def test_length_ratio(self):
        w = Waveform(np.random.default_rng(0).normal(size=16000), 16000)
        assert len(resample(w, 8000)) == 8000
        assert len(resample(w, 22050)) == int(round(16000 * 22050 / 16000))

    def test_identity_same_rate(self, tone):
        out = resample(tone, 16000)
        assert np.array_equal(out.samples, tone.samples)

    def test_sine_peak_preserved_across_downsample(self, tone):
        out = resample(tone, 8000)
        bin_width = 8000 / len(out)
        assert abs(fft_peak_hz(out) - 440.0) <= bin_width + 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=4000)
        w = Waveform(x, 16000)
        scaled = Waveform(np.asarray(2.5 * w.samples, dtype=np.float64), 16000)
        a = resample(scaled, 11025).samples.astype(np.float64)
        b = 2.5 * resample(w, 11025).samples.astype(np.float64)
        denom = np.maximum(np.abs(a), np.abs(b)).max()
        assert np.max(np.abs(a - b)) <= 1e-9 * max(denom, 1.0)

    def test_zero_target_rate_rejected(self, tone):
        with pytest.raises(ValueError):
            resample(tone, 0)


class TestStft:
    def test_one_second_framing(self, tone):
        spec = stft(tone, 25.0, 10.0)
        assert spec.frames.shape == (98, 257)
        assert spec.frame_length_samples == 400
        assert spec.frame_shift_samples == 160

    def test_all_zero_signal(self):
        spec = stft(Waveform(np.zeros(16000), 16000), 25.0, 10.0)
        assert np.all(spec.frames == 0)

    def test_too_short_waveform_gives_empty(self):
        spec = stft(Waveform(np.zeros(100), 16000), 25.0, 10.0)
        assert spec.frames.shape[0] == 0

    def test_dc_input_reveals_window_transform(self):
        # A constant signal makes every frame equal the window itself.
        w = Waveform(np.ones(1600), 16000)
        spec = stft(w, 25.0, 10.0, n_fft=512, window="hann", pre_emphasis_coeff=0.0)
        expected = np.abs(np.fft.rfft(window_function("hann", 400), 512))
        assert np.allclose(np.abs(spec.frames[0]), expected, atol=1e-10)

    def test_impulse_at_frame_start_is_flat(self):
        # Windowed impulse at sample 0 has |FFT| = window[0] at every bin.
        x = np.zeros(1600)
        x[0] = 1.0
        spec = stft(Waveform(x, 16000), 25.0, 10.0, n_fft=512, window="hamming", pre_emphasis_coeff=0.0)
        w0 = window_function("hamming", 400)[0]
        assert np.allclose(np.abs(spec.frames[0]), w0, atol=1e-12)

    def test_parseval_no_overlap(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=16000)
        w = Waveform(x, 16000)
        spec = stft(w, 25.0, 25.0, n_fft=512, window="hann", pre_emphasis_coeff=0.0)
        win = window_function("hann", 400)
        frames_energy = 0.0
        xs = w.samples.astype(np.float64)
        for t in range(spec.frames.shape[0]):
            seg = xs[t * 400 : t * 400 + 400] * win
            frames_energy += np.sum(seg**2)
        full = np.abs(spec.frames) ** 2
        spectral = (2.0 * full.sum() - full[:, 0].sum() - full[:, -1].sum()) / spec.n_fft
        assert abs(spectral - frames_energy) <= 1e-6 * frames_energy

    def test_invalid_framing_rejected(self, tone):
        with pytest.raises(ValueError):
            stft(tone, 5.0, 10.0)
        with pytest.raises(ValueError):
            stft(tone, 25.0, 10.0, n_fft=256)

    def test_unknown_window_rejected(self, tone):
        with pytest.raises(ValueError):
            stft(tone, 25.0, 10.0, window="blackman")


class TestConvolve:
    def test_identity_kernel(self, tone):
        out = convolve(tone, [1.0])
        assert np.allclose(out.samples, tone.samples, atol=1e-12)

    def test_impulse_input_yields_kernel(self):
        x = np.zeros(16)
        x[0] = 1.0
        kernel = np.arange(1.0, 6.0)
        out = convolve(Waveform(x, 8000), kernel)
        assert np.allclose(out.samples[:5], kernel, atol=1e-12)
        assert np.allclose(out.samples[5:], 0.0, atol=1e-12)

    def test_fft_matches_direct(self):
        rng = np.random.default_rng(11)
        w = Waveform(rng.normal(size=1000), 8000)
        kernel = rng.normal(size=64)
        direct = convolve(w, kernel, method="direct").samples.astype(np.float64)
        via_fft = convolve(w, kernel, method="fft").samples.astype(np.float64)
        scale = np.max(np.abs(direct))
        assert np.max(np.abs(direct - via_fft)) < 1e-10 * max(scale, 1.0)

    def test_distributes_over_addition(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=500)
        b = rng.normal(size=500)
        kernel = rng.normal(size=32)
        lhs = convolve(Waveform(a + b, 8000), kernel).samples.astype(np.float64)
        rhs = convolve(Waveform(a, 8000), kernel).samples.astype(np.float64) + convolve(
            Waveform(b, 8000), kernel
        ).samples.astype(np.float64)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(np.max(np.abs(lhs)), 1.0)

    def test_empty_kernel_rejected(self, tone):
        with pytest.raises(ValueError):
            convolve(tone, [])

    def test_output_truncated_to_input_length(self, tone):
        out = convolve(tone, np.ones(300) / 300.0)
        assert len(out) == len(tone)


def _write_raw_wav(path, payload: bytes, channels: int, rate: int, fmt: int = 1, bits: int = 16):
    block = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, fmt, channels, rate, rate * block, block, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)


def test_complex_spectrogram_records_framing(tone):
    spec = stft(tone, 25.0, 10.0)
    assert isinstance(spec, ComplexSpectrogram)
    assert spec.n_fft >= spec.frame_length_samples
    assert spec.padding == "snip-edges"
