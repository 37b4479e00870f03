import numpy as np
import pytest

from speechcl.dsp import Waveform, sine
from speechcl.features import (
    LOG_FLOOR,
    CmvnStats,
    FeatureMatrix,
    FrontendConfig,
    accumulate_cmvn,
    apply_cmvn,
    fbank,
    mel_filterbank,
    normalize_per_utterance,
)


class TestFbank:
    def test_all_zero_waveform_hits_log_floor(self):
        f = fbank(Waveform(np.zeros(16000), 16000))
        assert np.all(f.values == np.log(LOG_FLOOR))

    def test_shape_one_second(self):
        f = fbank(sine(440.0, 1.0, 16000))
        assert f.values.shape == (98, 80)
        assert f.frame_shift_ms == 10.0

    def test_filters_nonnegative_unimodal(self):
        filters = mel_filterbank(80, 512, 16000)
        assert np.all(filters >= 0.0)
        for row in filters:
            support = np.flatnonzero(row)
            if len(support) < 3:
                continue
            peak = support[np.argmax(row[support])]
            rising = row[support[0] : peak + 1]
            falling = row[peak : support[-1] + 1]
            assert np.all(np.diff(rising) >= -1e-12)
            assert np.all(np.diff(falling) <= 1e-12)

    def test_filter_centers_strictly_increase(self):
        filters = mel_filterbank(40, 512, 16000)
        centers = [np.argmax(row) for row in filters]
        assert all(b > a for a, b in zip(centers, centers[1:]))

    def test_too_many_mels_rejected(self):
        with pytest.raises(ValueError):
            mel_filterbank(300, 512, 16000)

    def test_translation_covariance_one_hop(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=16000) * 0.2
        base = fbank(Waveform(x, 16000)).values
        shifted = fbank(Waveform(x[160:], 16000)).values
        # interior rows: row i of the shifted signal equals row i+1 originally
        assert shifted.shape[0] == base.shape[0] - 1
        assert np.allclose(shifted[1:], base[2:], atol=1e-8)

    def test_frontend_config_validation(self):
        with pytest.raises(ValueError):
            FrontendConfig(n_mels=0)
        with pytest.raises(ValueError):
            FrontendConfig(cmvn="global")


class TestCmvn:
    def test_single_constant_matrix(self):
        f = FeatureMatrix(np.full((10, 4), 5.0), 10.0, "u1")
        stats = accumulate_cmvn([f])
        mean, var = stats.mean_var("u1")
        assert np.allclose(mean, 5.0)
        assert np.allclose(var, 0.0)

    def test_two_matrices_population_variance(self):
        a = FeatureMatrix(np.full((1, 3), 1.0), 10.0, "u", speaker_id="s")
        b = FeatureMatrix(np.full((1, 3), 3.0), 10.0, "v", speaker_id="s")
        mean, var = accumulate_cmvn([a, b]).mean_var("s")
        assert np.allclose(mean, 2.0)
        assert np.allclose(var, 1.0)

    def test_accumulation_additivity(self):
        rng = np.random.default_rng(9)
        mats = [FeatureMatrix(rng.normal(size=(7, 5)), 10.0, f"u{i}", speaker_id="s") for i in range(4)]
        joint = accumulate_cmvn(mats)
        merged = accumulate_cmvn(mats[:2]).merge(accumulate_cmvn(mats[2:]))
        m1, v1 = joint.mean_var("s")
        m2, v2 = merged.mean_var("s")
        assert np.allclose(m1, m2)
        assert np.allclose(v1, v2)

    def test_constant_channel_normalizes_to_zero(self):
        f = FeatureMatrix(np.full((6, 2), 3.3), 10.0, "u1")
        out = apply_cmvn(f, accumulate_cmvn([f]))
        assert np.allclose(out.values, 0.0)

    def test_normalized_moments(self):
        rng = np.random.default_rng(3)
        f = FeatureMatrix(rng.normal(2.0, 3.0, size=(400, 8)), 10.0, "u1")
        out = apply_cmvn(f, accumulate_cmvn([f]))
        assert np.all(np.abs(out.values.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(out.values.var(axis=0) - 1.0) < 1e-6)

    def test_second_pass_with_recomputed_stats_is_identity(self):
        rng = np.random.default_rng(4)
        f = FeatureMatrix(rng.normal(size=(200, 6)), 10.0, "u1")
        once = normalize_per_utterance(f)
        twice = normalize_per_utterance(once)
        assert np.allclose(twice.values, once.values, atol=1e-6)

    def test_missing_speaker_error_names_it(self):
        f = FeatureMatrix(np.zeros((2, 2)), 10.0, "u9")
        with pytest.raises(LookupError, match="u9"):
            apply_cmvn(f, CmvnStats())

    def test_speaker_fallback_is_utterance_id(self):
        f = FeatureMatrix(np.ones((3, 2)), 10.0, "solo")
        stats = accumulate_cmvn([f])
        assert "solo" in stats.counts
