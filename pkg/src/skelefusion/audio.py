"""Deterministic audio feature extraction for motion conditioning.

Everything here is plain DSP: short-time Fourier analysis, a mel
filterbank, and a 35-wide per-frame temporal feature vector laid out as

    [0:20]  MFCCs (DCT-II of the log-mel spectrum)
    [20:32] chroma energies (12 pitch classes)
    [32]    onset strength (half-wave rectified spectral flux)
    [33]    RMS energy
    [34]    beat indicator (1.0 on detected beat frames)

Feature rows are aligned to motion frames at the caller's fps. There is
no randomness anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

TEMPORAL_DIM = 35
N_MFCC = 20
N_CHROMA = 12
DEFAULT_WINDOW = 1024
DEFAULT_HOP = 512
DEFAULT_N_MELS = 80

_BPM_RANGE = (40.0, 240.0)


@dataclass(frozen=True)
class AudioFeatureTrack:
    """Per-motion-frame audio features.

    Attributes:
        temporal: ``[T, 35]`` feature matrix (layout in module docstring).
        mel: ``[T, n_mels]`` log-power mel spectrogram.
        sample_rate: Source audio sample rate.
        fps: Motion frame rate the rows are aligned to.
    """

    temporal: np.ndarray
    mel: np.ndarray
    sample_rate: int
    fps: float

    def __post_init__(self):
        temporal = np.asarray(self.temporal, dtype=np.float64)
        mel = np.asarray(self.mel, dtype=np.float64)
        if temporal.ndim != 2 or temporal.shape[1] != TEMPORAL_DIM:
            raise ShapeError(f"temporal features must be [T, {TEMPORAL_DIM}], got {temporal.shape}")
        if mel.ndim != 2 or mel.shape[0] != temporal.shape[0]:
            raise ShapeError(f"mel must be [T, n_mels] with T={temporal.shape[0]}, got {mel.shape}")
        if not (np.isfinite(temporal).all() and np.isfinite(mel).all()):
            raise ValueError("audio features contain non-finite values")
        object.__setattr__(self, "temporal", temporal)
        object.__setattr__(self, "mel", mel)

    @property
    def frames(self) -> int:
        return self.temporal.shape[0]

    def pooled(self) -> np.ndarray:
        """Mean over frames of the temporal features (conditioning vector)."""
        return self.temporal.mean(axis=0)


def stft(samples: np.ndarray, window_len: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> np.ndarray:
    """Hann-windowed short-time Fourier transform.

    Frames start at ``i * hop`` with no padding, so the frame count is
    ``(len(samples) - window_len) // hop + 1`` and each row holds
    ``window_len // 2 + 1`` one-sided bins.

    Raises:
        ValueError: If ``window_len`` is not a power of two, ``hop`` is
            out of range, or the signal is shorter than one window.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"samples must be 1-D, got shape {x.shape}")
    if window_len < 2 or window_len & (window_len - 1):
        raise ValueError(f"window_len must be a power of two, got {window_len}")
    if not 0 < hop <= window_len:
        raise ValueError(f"hop must satisfy 0 < hop <= window_len, got {hop}")
    if x.size < window_len:
        raise ValueError(f"need at least window_len={window_len} samples, got {x.size}")
    n_frames = (x.size - window_len) // hop + 1
    window = hann_window(window_len)
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(x[idx] * window, axis=1)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_bins: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over one-sided FFT bins, spanning 0..sr/2.

    Every filter is nonnegative with positive total weight; a filter too
    narrow to cover any bin gets unit weight at its center bin instead of
    silently vanishing.
    """
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be > 0, got {sample_rate}")
    window_len = 2 * (n_bins - 1)
    bin_freqs = np.arange(n_bins) * sample_rate / window_len
    mel_pts = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - mid, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        if fb[m].sum() == 0.0:
            fb[m, int(np.argmin(np.abs(bin_freqs - mid)))] = 1.0
    return fb


def mel_spectrogram(spec: np.ndarray, sample_rate: int, n_mels: int = DEFAULT_N_MELS) -> np.ndarray:
    """Log-power mel spectrogram ``log(1 + power @ filterbank)``."""
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise ShapeError(f"spectrogram must be [frames, bins], got shape {spec.shape}")
    power = np.abs(spec) ** 2
    fb = mel_filterbank(n_mels, spec.shape[1], sample_rate)
    return np.log1p(power @ fb.T)


def _dct_ii_matrix(n_out: int, n_in: int) -> np.ndarray:
    # Orthonormal DCT-II basis rows.
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


def _chroma_map(n_bins: int, sample_rate: int) -> np.ndarray:
    """Binary [12, bins] map from FFT bins to pitch classes (C = class 0)."""
    window_len = 2 * (n_bins - 1)
    freqs = np.arange(n_bins) * sample_rate / window_len
    cmap = np.zeros((N_CHROMA, n_bins))
    audible = freqs >= 20.0
    # 440 Hz is A; offset by 9 semitones so class 0 is C.
    pitch = np.zeros(n_bins)
    pitch[audible] = np.round(12.0 * np.log2(freqs[audible] / 440.0)) + 9.0
    classes = np.mod(pitch, 12).astype(int)
    for k in np.nonzero(audible)[0]:
        cmap[classes[k], k] = 1.0
    return cmap


def temporal_features(
    samples: np.ndarray,
    sample_rate: int,
    fps: float,
    window_len: int = DEFAULT_WINDOW,
    hop: int = DEFAULT_HOP,
    n_mels: int = DEFAULT_N_MELS,
) -> np.ndarray:
    """Extract the 35-dim per-motion-frame feature matrix.

    Audio-rate features are computed on the STFT grid, then linearly
    interpolated to motion-frame centers at ``fps``. The beat indicator
    is detected directly on the motion grid: the onset envelope's
    autocorrelation picks the dominant period, the best-supported phase
    places the beats.
    """
    x = np.asarray(samples, dtype=np.float64)
    spec = stft(x, window_len, hop)
    mag = np.abs(spec)
    power = mag**2

    logmel = np.log1p(power @ mel_filterbank(n_mels, spec.shape[1], sample_rate).T)
    mfcc = logmel @ _dct_ii_matrix(N_MFCC, n_mels).T
    chroma = power @ _chroma_map(spec.shape[1], sample_rate).T

    flux = np.zeros(mag.shape[0])
    if mag.shape[0] > 1:
        flux[1:] = np.maximum(0.0, np.diff(mag, axis=0)).sum(axis=1)

    n_frames = mag.shape[0]
    starts = hop * np.arange(n_frames)
    frame_view = x[np.arange(window_len)[None, :] + starts[:, None]]
    rms = np.sqrt((frame_view**2).mean(axis=1))

    t_motion = int(round(x.size / sample_rate * fps))
    t_motion = max(t_motion, 1)
    audio_times = (starts + window_len / 2.0) / sample_rate
    motion_times = (np.arange(t_motion) + 0.5) / fps

    cols = np.concatenate([mfcc, chroma, flux[:, None], rms[:, None]], axis=1)
    aligned = _interp_columns(cols, audio_times, motion_times)

    onset_env = aligned[:, N_MFCC + N_CHROMA]
    beat = _beat_indicator(onset_env, fps)
    return np.concatenate([aligned, beat[:, None]], axis=1)


def _interp_columns(values: np.ndarray, src_t: np.ndarray, dst_t: np.ndarray) -> np.ndarray:
    out = np.empty((dst_t.size, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.interp(dst_t, src_t, values[:, c])
    return out


def _beat_indicator(onset_env: np.ndarray, fps: float) -> np.ndarray:
    """Mark beat frames from the onset envelope's dominant period."""
    T = onset_env.size
    beat = np.zeros(T)
    if onset_env.max() <= 0.0:
        return beat
    lmin = max(2, int(round(fps * 60.0 / _BPM_RANGE[1])))
    lmax = min(T - 1, int(round(fps * 60.0 / _BPM_RANGE[0])))
    if lmax < lmin:
        return beat
    # Unnormalized autocorrelation: longer lags overlap fewer terms, so
    # the fundamental period wins over its own multiples.
    scores = [np.dot(onset_env[: T - lag], onset_env[lag:]) for lag in range(lmin, lmax + 1)]
    period = lmin + int(np.argmax(scores))
    phases = [onset_env[off::period].sum() for off in range(period)]
    beat[int(np.argmax(phases))::period] = 1.0
    return beat


def align_to_motion(track: AudioFeatureTrack, t_motion: int) -> AudioFeatureTrack:
    """Linearly resample a feature track to exactly ``t_motion`` frames.

    All columns are interpolated uniformly; after resampling the beat
    column is fractional wherever beats fall between new frame centers.
    """
    if t_motion < 1:
        raise ValueError(f"t_motion must be >= 1, got {t_motion}")
    if track.frames == t_motion:
        return track
    src = np.linspace(0.0, 1.0, track.frames)
    dst = np.linspace(0.0, 1.0, t_motion)
    return AudioFeatureTrack(
        temporal=_interp_columns(track.temporal, src, dst),
        mel=_interp_columns(track.mel, src, dst),
        sample_rate=track.sample_rate,
        fps=track.fps,
    )


def extract_feature_track(
    samples: np.ndarray,
    sample_rate: int,
    fps: float,
    t_motion: int | None = None,
    window_len: int = DEFAULT_WINDOW,
    hop: int = DEFAULT_HOP,
    n_mels: int = DEFAULT_N_MELS,
) -> AudioFeatureTrack:
    """Full extraction: temporal matrix plus aligned mel spectrogram."""
    temporal = temporal_features(samples, sample_rate, fps, window_len, hop, n_mels)
    spec = stft(np.asarray(samples, dtype=np.float64), window_len, hop)
    mel = mel_spectrogram(spec, sample_rate, n_mels)
    starts = hop * np.arange(spec.shape[0])
    audio_times = (starts + window_len / 2.0) / sample_rate
    motion_times = (np.arange(temporal.shape[0]) + 0.5) / fps
    mel_aligned = _interp_columns(mel, audio_times, motion_times)
    track = AudioFeatureTrack(temporal=temporal, mel=mel_aligned, sample_rate=sample_rate, fps=fps)
    if t_motion is not None:
        track = align_to_motion(track, t_motion)
    return track
