import numpy as np
import pytest

from speechcl.augment import (
    AugmentConfig,
    NoiseBank,
    add_noise,
    augment_waveform,
    derive_rng,
    derive_seed,
    make_views,
    pitch_shift,
    reverberate,
    spec_freq_mask,
    spec_time_mask,
    speed_perturb,
)
from speechcl.dsp import Waveform, sine, write_wav
from speechcl.features import FeatureMatrix, FrontendConfig, fbank

from conftest import fft_peak_hz


class TestPitchShift:
    def test_zero_cents_is_identity(self, tone):
        out = pitch_shift(tone, 0)
        assert np.max(np.abs(out.samples - tone.samples)) < 1e-6

    @pytest.mark.parametrize("cents", [300, -300])
    def test_sine_frequency_ratio(self, tone, cents):
        expected = 440.0 * 2.0 ** (cents / 1200.0)
        peak = fft_peak_hz(pitch_shift(tone, cents))
        assert abs(peak - expected) <= 0.02 * expected

    def test_duration_preserved(self, tone):
        assert len(pitch_shift(tone, 250)) == len(tone)

    def test_rate_preserved(self, tone):
        assert pitch_shift(tone, 100).sample_rate_hz == tone.sample_rate_hz

    def test_extreme_cents_rejected(self, tone):
        with pytest.raises(ValueError):
            pitch_shift(tone, 1300)


class TestSpeedPerturb:
    def test_factor_one_is_identity(self, tone):
        assert np.array_equal(speed_perturb(tone, 1.0).samples, tone.samples)

    def test_length_arithmetic(self):
        w = Waveform(np.zeros(16000), 16000)
        assert len(speed_perturb(w, 0.8)) == 20000
        assert len(speed_perturb(w, 1.25)) == 12800

    @pytest.mark.parametrize("factor", [1.2, 0.8])
    def test_sine_frequency_scales(self, tone, factor):
        expected = 440.0 * factor
        peak = fft_peak_hz(speed_perturb(tone, factor))
        assert abs(peak - expected) <= 0.01 * expected

    def test_invalid_factor_rejected(self, tone):
        with pytest.raises(ValueError):
            speed_perturb(tone, 0.0)
        with pytest.raises(ValueError):
            speed_perturb(tone, 3.0)


class TestAddNoise:
    def test_scale_for_10db_equal_power(self):
        rng = np.random.default_rng(0)
        speech = Waveform(np.sign(rng.normal(size=8000)), 8000)  # RMS exactly 1
        noise = Waveform(np.sign(rng.normal(size=8000)), 8000)
        out, scaled = add_noise(speech, noise, 10.0, np.random.default_rng(1))
        assert scaled
        added = out.samples - speech.samples
        # every sample of the scaled noise has magnitude 10**-0.5
        assert np.allclose(np.abs(added), 10.0**-0.5, atol=1e-9)

    def test_zero_db_equal_power_scale_is_one(self):
        rng = np.random.default_rng(2)
        speech = Waveform(np.sign(rng.normal(size=4000)), 8000)
        noise = Waveform(np.sign(rng.normal(size=4000)), 8000)
        out, _ = add_noise(speech, noise, 0.0, np.random.default_rng(3))
        assert np.allclose(np.abs(out.samples - speech.samples), 1.0, atol=1e-9)

    def test_measured_snr_within_tenth_db_100_cases(self):
        rng = np.random.default_rng(7)
        for case in range(100):
            n = int(rng.integers(2000, 8000))
            speech = Waveform(rng.normal(0, 0.3, n), 16000)
            noise = Waveform(rng.normal(0, 0.1, int(rng.integers(500, 9000))), 16000)
            target = float(rng.uniform(5.0, 10.0))
            out, scaled = add_noise(speech, noise, target, rng)
            assert scaled
            addend = out.samples.astype(np.float64) - speech.samples.astype(np.float64)
            measured = 10.0 * np.log10(
                np.mean(speech.samples.astype(np.float64) ** 2) / np.mean(addend**2)
            )
            assert abs(measured - target) <= 0.1, f"case {case}: {measured} vs {target}"

    def test_zero_power_speech_flagged_not_mixed(self):
        speech = Waveform(np.zeros(1000), 8000)
        noise = Waveform(np.ones(1000), 8000)
        out, scaled = add_noise(speech, noise, 5.0, np.random.default_rng(0))
        assert not scaled
        assert np.array_equal(out.samples, speech.samples)

    def test_empty_noise_rejected(self, tone):
        with pytest.raises(ValueError):
            add_noise(tone, Waveform(np.zeros(0), 16000), 5.0, np.random.default_rng(0))

    def test_rate_mismatch_resamples(self, tone):
        noise = Waveform(np.random.default_rng(1).normal(0, 0.1, 8000), 8000)
        out, scaled = add_noise(tone, noise, 8.0, np.random.default_rng(2))
        assert scaled
        assert out.sample_rate_hz == 16000


class TestReverberate:
    def test_zero_reverberance_is_dry(self, tone):
        out = reverberate(tone, 0.0, 50.0, 50.0)
        assert np.max(np.abs(out.samples - tone.samples)) < 1e-6

    def test_impulse_has_energy_past_50ms(self):
        x = np.zeros(16000)
        x[0] = 1.0
        out = reverberate(Waveform(x, 16000), 50.0, 50.0, 50.0)
        tail = out.samples[int(0.05 * 16000) :]
        assert np.sum(tail**2) > 0.0

    def test_tail_energy_monotone_in_reverberance(self):
        x = np.zeros(16000)
        x[0] = 1.0
        w = Waveform(x, 16000)
        cut = int(0.1 * 16000)
        energies = []
        for reverberance in (10.0, 30.0, 50.0, 70.0, 90.0):
            out = reverberate(w, reverberance, 50.0, 50.0)
            energies.append(float(np.sum(out.samples[cut:] ** 2)))
        assert all(b >= a for a, b in zip(energies, energies[1:])), energies

    def test_length_and_rate_preserved(self, tone):
        out = reverberate(tone, 65.0, 20.0, 80.0)
        assert len(out) == len(tone)
        assert out.sample_rate_hz == tone.sample_rate_hz

    def test_out_of_range_parameters_rejected(self, tone):
        with pytest.raises(ValueError):
            reverberate(tone, 101.0, 50.0, 50.0)
        with pytest.raises(ValueError):
            reverberate(tone, 50.0, -1.0, 50.0)


def _feature(t=40, f=8, fill=1.0):
    return FeatureMatrix(np.full((t, f), fill), 10.0, "u")


class TestSpectrogramMasks:
    def test_zero_max_width_is_identity(self):
        f = _feature()
        out = spec_time_mask(f, 0, np.random.default_rng(0))
        assert np.array_equal(out.values, f.values)
        out = spec_freq_mask(f, 0, np.random.default_rng(0))
        assert np.array_equal(out.values, f.values)

    def test_full_width_draw_zeroes_everything(self):
        f = _feature(t=3)
        zeroed = None
        for seed in range(200):
            out = spec_time_mask(f, 10, np.random.default_rng(seed))
            if np.all(out.values == 0.0):
                zeroed = seed
                break
        assert zeroed is not None  # width >= T is clamped to a full mask

    def test_masked_region_is_contiguous_and_local(self):
        rng = np.random.default_rng(42)
        base = FeatureMatrix(np.random.default_rng(1).normal(size=(50, 12)) + 4.0, 10.0, "u")
        out = spec_time_mask(base, 20, rng)
        rows = np.flatnonzero(np.any(out.values != base.values, axis=1))
        if rows.size:
            assert np.array_equal(rows, np.arange(rows[0], rows[-1] + 1))
            assert np.all(out.values[rows] == 0.0)
        untouched = np.setdiff1d(np.arange(50), rows)
        assert np.array_equal(out.values[untouched], base.values[untouched])

    def test_time_mask_expected_fraction(self):
        # mean masked-frame fraction over draws: E[U{0..40}]/400 = 0.05
        f = FeatureMatrix(np.ones((400, 2)), 10.0, "u")
        rng = np.random.default_rng(11)
        total = 0.0
        draws = 10_000
        for _ in range(draws):
            out = spec_time_mask(f, 40, rng)
            total += np.mean(out.values[:, 0] == 0.0)
        assert abs(total / draws - 0.05) <= 0.005

    def test_freq_mask_expected_fraction(self):
        f = FeatureMatrix(np.ones((2, 80)), 10.0, "u")
        rng = np.random.default_rng(13)
        total = 0.0
        draws = 10_000
        for _ in range(draws):
            out = spec_freq_mask(f, 10, rng)
            total += np.mean(out.values[0] == 0.0)
        assert abs(total / draws - 0.0625) <= 0.006

    def test_determinism(self):
        f = FeatureMatrix(np.random.default_rng(0).normal(size=(30, 10)), 10.0, "u")
        a = spec_time_mask(f, 10, np.random.default_rng(99)).values
        b = spec_time_mask(f, 10, np.random.default_rng(99)).values
        assert np.array_equal(a, b)


class TestNoiseBank:
    def test_lexicographic_load_and_sampling(self, tmp_path):
        rng = np.random.default_rng(0)
        for name, scale in (("b.wav", 0.2), ("a.wav", 0.1)):
            write_wav(Waveform(rng.normal(0, scale, 800), 16000), tmp_path / name)
        bank = NoiseBank.from_dir(tmp_path)
        assert len(bank) == 2
        # a.wav sorts first; rate-matched sampling returns it unresampled
        clip = bank.sample(np.random.default_rng(1), 16000)
        assert clip.sample_rate_hz == 16000

    def test_empty_bank_rejected_at_use(self, tone):
        cfg = AugmentConfig(enable_pitch=False, enable_speed=False, enable_reverb=False)
        with pytest.raises(ValueError):
            augment_waveform(tone, cfg, NoiseBank([]), np.random.default_rng(0))


class TestMakeViews:
    def _frontend(self):
        cfg = FrontendConfig()
        return lambda w: fbank(w, cfg)

    def test_disabled_augmentations_yield_plain_fbank(self, tone):
        cfg = AugmentConfig(
            enable_pitch=False, enable_speed=False, enable_reverb=False,
            enable_noise=False, enable_time_mask=False, enable_freq_mask=False,
        )
        vi, vj = make_views(tone, cfg, None, self._frontend(), np.random.default_rng(0))
        plain = fbank(tone)
        assert np.array_equal(vi.values, plain.values)
        assert np.array_equal(vj.values, plain.values)

    def test_same_seed_reproduces_pair(self, tone):
        bank = NoiseBank([Waveform(np.random.default_rng(5).normal(0, 0.05, 16000), 16000)])
        cfg = AugmentConfig()
        a = make_views(tone, cfg, bank, self._frontend(), derive_rng(1, "utt", 0))
        b = make_views(tone, cfg, bank, self._frontend(), derive_rng(1, "utt", 0))
        assert np.array_equal(a[0].values, b[0].values)
        assert np.array_equal(a[1].values, b[1].values)

    def test_views_differ_with_defaults(self):
        # short clip keeps 1000 trials affordable; the distinctness property
        # is about the random chain, not the clip length
        tone = sine(440.0, 0.2, 16000)
        bank = NoiseBank([Waveform(np.random.default_rng(5).normal(0, 0.05, 3200), 16000)])
        cfg = AugmentConfig()
        frontend = self._frontend()
        distinct = 0
        trials = 1000
        for seed in range(trials):
            vi, vj = make_views(tone, cfg, bank, frontend, derive_rng(seed))
            if vi.values.shape != vj.values.shape or not np.array_equal(vi.values, vj.values):
                distinct += 1
        assert distinct >= 999

    def test_rate_preserved_through_chain(self, tone):
        bank = NoiseBank([Waveform(np.random.default_rng(5).normal(0, 0.05, 16000), 16000)])
        out = augment_waveform(tone, AugmentConfig(), bank, np.random.default_rng(3))
        assert out.sample_rate_hz == tone.sample_rate_hz


class TestSeedDerivation:
    def test_stable_and_distinct(self):
        assert derive_seed(1, "utt", 0) == derive_seed(1, "utt", 0)
        assert derive_seed(1, "utt", 0) != derive_seed(1, "utt", 1)
        assert derive_seed(1, "a") != derive_seed(1, "b")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(pitch_cents_range=(300, -300))
        with pytest.raises(ValueError):
            AugmentConfig(time_mask_max_frames=-1)
        with pytest.raises(ValueError):
            AugmentConfig(reverberance_pct=150.0)

    def test_disabled_copy_helper(self):
        cfg = AugmentConfig().disabled("noise")
        assert not cfg.enable_noise
        with pytest.raises(ValueError):
            AugmentConfig().disabled("nonexistent")
