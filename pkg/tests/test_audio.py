import numpy as np
import pytest

from skelefusion.audio import (
    AudioFeatureTrack,
    align_to_motion,
    extract_feature_track,
    hann_window,
    mel_filterbank,
    mel_spectrogram,
    stft,
    temporal_features,
)
from skelefusion.synth import synth_dance

SR = 16000


class TestStft:
    def test_frame_and_bin_counts(self):
        spec = stft(np.zeros(SR), window_len=1024, hop=512)
        assert spec.shape == ((SR - 1024) // 512 + 1, 513)

    def test_zero_input(self):
        spec = stft(np.zeros(4096), 1024, 512)
        assert np.all(spec == 0)

    def test_pure_sine_peaks_at_its_bin(self):
        # Oracle: direct DFT of one windowed frame.
        k = 40
        freq = k * SR / 1024
        t = np.arange(SR) / SR
        x = np.sin(2 * np.pi * freq * t)
        spec = stft(x, 1024, 512)
        assert np.all(np.argmax(np.abs(spec), axis=1) == k)
        frame = x[:1024] * hann_window(1024)
        direct = np.array([np.sum(frame * np.exp(-2j * np.pi * kk * np.arange(1024) / 1024)) for kk in range(513)])
        assert np.abs(direct - spec[0]).max() < 1e-8 * np.abs(direct).max()

    def test_parseval(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=2048)
        spec = stft(x, 1024, 512)
        win = hann_window(1024)
        for i in range(spec.shape[0]):
            frame = x[i * 512 : i * 512 + 1024] * win
            time_energy = np.sum(frame**2)
            mags = np.abs(spec[i]) ** 2
            freq_energy = (mags[0] + 2 * mags[1:-1].sum() + mags[-1]) / 1024
            assert abs(time_energy - freq_energy) < 1e-6 * time_energy

    def test_validation(self):
        with pytest.raises(ValueError):
            stft(np.zeros(100), 1024, 512)  # too short
        with pytest.raises(ValueError):
            stft(np.zeros(4096), 1000, 512)  # not a power of two
        with pytest.raises(ValueError):
            stft(np.zeros(4096), 1024, 0)
        with pytest.raises(ValueError):
            stft(np.zeros(4096), 1024, 2048)


class TestMel:
    def test_zero_spectrogram(self):
        out = mel_spectrogram(np.zeros((4, 513), dtype=complex), SR, 80)
        assert np.all(out == 0.0)

    def test_filterbank_nonnegative_with_positive_sums(self):
        for n_mels in (1, 10, 80, 200):
            fb = mel_filterbank(n_mels, 513, SR)
            assert fb.shape == (n_mels, 513)
            assert np.all(fb >= 0.0)
            assert np.all(fb.sum(axis=1) > 0.0)

    def test_white_noise_gives_positive_energies(self):
        rng = np.random.default_rng(1)
        spec = stft(rng.normal(size=8192), 1024, 512)
        out = mel_spectrogram(spec, SR, 40)
        assert np.all(out > 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            mel_filterbank(0, 513, SR)
        with pytest.raises(ValueError):
            mel_filterbank(10, 513, 0)


class TestTemporalFeatures:
    def test_width_is_35(self):
        rng = np.random.default_rng(2)
        for n in (2048, 9000, SR):
            feats = temporal_features(rng.normal(size=n), SR, 30.0)
            assert feats.shape[1] == 35
            assert np.isfinite(feats).all()

    def test_silence(self):
        feats = temporal_features(np.zeros(SR), SR, 30.0)
        assert np.all(feats == 0.0)

    def test_click_track_beats(self):
        _, audio, rate = synth_dance(150, 14, 120.0, seed=3, fps=30.0)
        feats = temporal_features(audio, rate, 30.0)
        fires = np.nonzero(feats[:, 34])[0]
        assert len(fires) >= 8
        assert np.all(np.abs(np.diff(fires) - 15) <= 1)

    def test_adversarial_inputs_stay_finite(self):
        for x in (
            np.ones(8192),  # DC
            np.concatenate([np.zeros(4000), [1.0], np.zeros(4192)]),  # impulse
            np.sign(np.sin(2 * np.pi * 220 * np.arange(8192) / SR)),  # square
        ):
            feats = temporal_features(x, SR, 30.0)
            assert np.isfinite(feats).all()

    def test_deterministic(self):
        _, audio, rate = synth_dance(60, 14, 99.0, seed=8)
        a = temporal_features(audio, rate, 30.0)
        b = temporal_features(audio, rate, 30.0)
        assert np.array_equal(a, b)

    def test_scaling_rms_linear_beat_unchanged(self):
        _, audio, rate = synth_dance(120, 14, 120.0, seed=5)
        base = temporal_features(audio, rate, 30.0)
        for c in (2.0, 0.5, 8.0):
            scaled = temporal_features(c * audio, rate, 30.0)
            assert np.allclose(scaled[:, 33], c * base[:, 33], rtol=1e-12, atol=0.0)
            assert np.array_equal(scaled[:, 34], base[:, 34])
        scaled = temporal_features(3.7 * audio, rate, 30.0)
        assert np.allclose(scaled[:, 33], 3.7 * base[:, 33], rtol=1e-9)
        assert np.array_equal(scaled[:, 34], base[:, 34])


class TestAlign:
    def _track(self, temporal):
        temporal = np.asarray(temporal, dtype=np.float64)
        return AudioFeatureTrack(
            temporal=temporal, mel=np.zeros((temporal.shape[0], 4)), sample_rate=SR, fps=30.0
        )

    def test_identity_when_lengths_match(self):
        track = self._track(np.random.default_rng(0).normal(size=(7, 35)))
        out = align_to_motion(track, 7)
        assert np.array_equal(out.temporal, track.temporal)

    def test_constant_stays_constant(self):
        track = self._track(np.full((5, 35), 3.25))
        out = align_to_motion(track, 11)
        assert np.all(out.temporal == 3.25)

    def test_linear_ramp(self):
        temporal = np.zeros((5, 35))
        temporal[:, 0] = np.linspace(0.0, 1.0, 5)
        out = align_to_motion(self._track(temporal), 3)
        assert np.allclose(out.temporal[:, 0], [0.0, 0.5, 1.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            align_to_motion(self._track(np.zeros((5, 35))), 0)


def test_extract_feature_track_aligns_to_motion():
    seq, audio, rate = synth_dance(45, 14, 120.0, seed=9)
    track = extract_feature_track(audio, rate, seq.fps, t_motion=seq.frames)
    assert track.frames == seq.frames
    assert track.temporal.shape == (45, 35)
    assert track.mel.shape[0] == 45
    pooled = track.pooled()
    assert pooled.shape == (35,)
    assert np.isfinite(pooled).all()
