import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clue import dsp
from clue.errors import SchemaError
from oracles import direct_dct2_ortho, direct_dft

CFG = dsp.DEFAULT_CONFIG
SR = CFG.sample_rate


def tone(freq, seconds=1.0, sr=SR, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


class TestConfig:
    def test_defaults(self):
        assert (CFG.sample_rate, CFG.frame_length, CFG.hop, CFG.n_mels, CFG.n_mfcc) == (22050, 2048, 512, 128, 40)
        assert CFG.upper_frequency == 11025

    @pytest.mark.parametrize("kwargs", [{"frame_length": 1000}, {"n_mfcc": 200}, {"fmax": 20000.0}, {"hop": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(SchemaError):
            dsp.DspConfig(**kwargs)


class TestSpectrum:
    def test_fft_matches_direct_dft(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(CFG.frame_length)
        power = dsp.power_spectrogram(x)[0]
        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(CFG.frame_length) / CFG.frame_length)
        ref = np.abs(direct_dft(x * window)[: CFG.frame_length // 2 + 1]) ** 2
        assert np.max(np.abs(power - ref) / np.max(ref)) < 1e-9

    def test_parseval(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(CFG.frame_length)
        X = direct_dft(x)
        lhs = np.sum(x**2)
        rhs = np.sum(np.abs(X) ** 2) / len(x)
        assert abs(lhs - rhs) / lhs < 1e-9
        full = np.fft.fft(x)
        assert abs(np.sum(np.abs(full) ** 2) / len(x) - lhs) / lhs < 1e-9

    def test_impulse_flat_spectrum(self):
        x = np.zeros(64)
        x[0] = 1.0
        np.testing.assert_allclose(np.fft.fft(x), np.ones(64), atol=1e-12)
        np.testing.assert_allclose(direct_dft(x), np.ones(64), atol=1e-12)

    def test_frames(self):
        frames = dsp.frame_signal(np.arange(2048 + 3 * 512, dtype=float))
        assert frames.shape == (4, 2048)
        assert frames[1, 0] == 512

    def test_too_short(self):
        with pytest.raises(SchemaError):
            dsp.mel_spectrogram(np.zeros(100))


class TestMel:
    def test_htk_scale(self):
        assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
        np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel([0, 440, 8000])), [0, 440, 8000], atol=1e-9)

    def test_filterbank_weights(self):
        bank = dsp.mel_filterbank()
        assert bank.shape == (128, 1025)
        assert np.all(bank >= 0)
        assert np.all(bank.sum(axis=0) <= 1 + 1e-9)

    def test_silence_floor(self):
        mel = dsp.mel_spectrogram(np.zeros(SR))
        np.testing.assert_allclose(mel, 10 * math.log10(CFG.log_floor))

    def test_1khz_band(self):
        # Oracle: the band whose triangle centre lies nearest 1 kHz on the mel axis,
        # with centres recomputed here from the HTK formula.
        mel_max = 2595 * math.log10(1 + (SR / 2) / 700)
        centers_mel = np.linspace(0, mel_max, 130)[1:-1]
        expected = int(np.argmin(np.abs(centers_mel - 2595 * math.log10(1 + 1000 / 700))))
        assert int(np.argmax(dsp.mel_spectrogram(tone(1000.0)))) == expected

    def test_noise_seeds_agree(self):
        n = CFG.frame_length + 99 * CFG.hop
        a = dsp.mel_spectrogram(np.random.default_rng(1).standard_normal(n) * 0.1)
        b = dsp.mel_spectrogram(np.random.default_rng(2).standard_normal(n) * 0.1)
        assert np.max(np.abs(a - b)) < 3.0


class TestMfcc:
    def test_silence(self):
        c = dsp.mfcc(np.zeros(SR))
        floor_db = 10 * math.log10(CFG.log_floor)
        assert c[0] == pytest.approx(math.sqrt(128) * floor_db, rel=1e-12)
        np.testing.assert_allclose(c[1:], 0, atol=1e-9)

    def test_dct_against_direct_sum(self):
        from scipy.fft import dct

        v = np.random.default_rng(3).standard_normal(128)
        np.testing.assert_allclose(dct(v, type=2, norm="ortho"), direct_dct2_ortho(v), atol=1e-10)
        const = np.full(128, -7.0)
        np.testing.assert_allclose(dct(const, type=2, norm="ortho"), direct_dct2_ortho(const), atol=1e-10)

    def test_mfcc_equals_dct_of_frame_logmel(self):
        x = np.random.default_rng(4).standard_normal(CFG.frame_length)
        logmel = dsp.mel_spectrogram(x)
        np.testing.assert_allclose(dsp.mfcc(x), direct_dct2_ortho(logmel)[:40], atol=1e-9)

    def test_frame_order_invariance(self):
        x = np.random.default_rng(5).standard_normal(CFG.frame_length * 4)
        frames = [x[i * 2048:(i + 1) * 2048] for i in range(4)]
        cfg = dsp.DspConfig(hop=2048)
        a = dsp.mfcc(np.concatenate(frames), cfg)
        b = dsp.mfcc(np.concatenate(frames[::-1]), cfg)
        np.testing.assert_allclose(a, b, atol=1e-9)


class TestChroma:
    @pytest.mark.parametrize("freq, cls", [(440.0, 9), (261.63, 0), (329.63, 4), (392.0, 7)])
    def test_tones(self, freq, cls):
        assert int(np.argmax(dsp.chroma(tone(freq)))) == cls

    def test_tone_class_agrees_with_dft_oracle(self):
        x = tone(440.0, seconds=CFG.frame_length / SR)
        spectrum = np.abs(direct_dft(x))[1: CFG.frame_length // 2]
        peak_hz = (1 + int(np.argmax(spectrum))) * SR / CFG.frame_length
        oracle = (round(12 * math.log2(peak_hz / 440)) + 9) % 12
        assert dsp.PITCH_CLASSES[oracle] == "A"
        assert int(np.argmax(dsp.chroma(x))) == oracle

    def test_silence_zero(self):
        np.testing.assert_array_equal(dsp.chroma(np.zeros(SR)), np.zeros(12))

    @given(st.floats(0.01, 100.0))
    def test_gain_invariance(self, gain):
        x = np.random.default_rng(6).standard_normal(CFG.frame_length * 2)
        np.testing.assert_allclose(dsp.chroma(gain * x), dsp.chroma(x), rtol=1e-9, atol=1e-12)

    def test_range(self):
        c = dsp.chroma(np.random.default_rng(7).standard_normal(SR))
        assert c.min() >= 0 and c.max() == 1.0


class TestFeatureVector:
    def test_length_and_parts(self):
        x = tone(300.0) + 0.01 * np.random.default_rng(8).standard_normal(SR)
        v = dsp.speech_feature_vector(x)
        assert v.shape == (180,)
        np.testing.assert_allclose(v[:40], dsp.mfcc(x), atol=1e-12)
        np.testing.assert_allclose(v[40:168], dsp.mel_spectrogram(x), atol=1e-12)
        np.testing.assert_allclose(v[168:], dsp.chroma(x), atol=1e-12)

    def test_deterministic(self):
        x = np.random.default_rng(9).standard_normal(SR)
        assert dsp.speech_feature_vector(x).tobytes() == dsp.speech_feature_vector(x.copy()).tobytes()

    def test_silence_vector(self):
        v = dsp.speech_feature_vector(np.zeros(SR))
        assert np.all(np.isfinite(v))
        assert np.all(v[168:] == 0)
