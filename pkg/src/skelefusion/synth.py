"""Synthetic beat-locked dance sequences with matching click-track audio.

The generator animates a 14-joint 2D stick figure whose limb swings and
root bounce are phase-locked to a click track at the requested tempo.
Joint counts other than 14 are supported by truncating the chain or by
placing extra keypoints along the bones, so the same generator covers
sparse and dense skeleton layouts.
"""

from __future__ import annotations

import numpy as np

from .skeleton import Edges, SkeletonSequence

# Canonical chain: pelvis-up torso, two arms, two legs.
JOINT_NAMES = (
    "pelvis", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_knee", "l_ankle", "r_knee", "r_ankle",
)
BASE_EDGES: Edges = (
    (0, 1), (1, 2), (2, 3),
    (1, 4), (4, 5), (5, 6),
    (1, 7), (7, 8), (8, 9),
    (0, 10), (10, 11), (0, 12), (12, 13),
)

_TORSO, _NECK, _HEAD = 0.24, 0.06, 0.09
_UPPER_ARM, _FOREARM = 0.13, 0.12
_HIP_OFF, _THIGH, _SHIN = 0.07, 0.17, 0.16


def synth_dance(
    frames: int,
    joints: int,
    bpm: float,
    seed: int,
    fps: float = 30.0,
    sample_rate: int = 16000,
    dims: int = 2,
) -> tuple[SkeletonSequence, np.ndarray, int]:
    """Generate a dancing stick figure and its click-track audio.

    All oscillations run at the beat period (or exact multiples of it),
    so motion and audio share one tempo. Amplitudes and phases are drawn
    from the seed, making distinct seeds produce distinct dances and
    equal seeds bit-identical ones.

    Args:
        frames: Number of motion frames, >= 2.
        joints: Number of joints, >= 2 (14 is the native chain).
        bpm: Tempo in beats per minute, > 0.
        seed: RNG seed controlling the choreography.
        fps: Motion frame rate.
        sample_rate: Audio sample rate in Hz.
        dims: 2 for planar motion, 3 adds a gentle depth sway.

    Returns:
        ``(sequence, audio_samples, sample_rate)`` where audio_samples is
        mono float64 in [-1, 1] spanning ``frames / fps`` seconds.
    """
    if frames < 2:
        raise ValueError(f"frames must be >= 2, got {frames}")
    if joints < 2:
        raise ValueError(f"joints must be >= 2, got {joints}")
    if bpm <= 0:
        raise ValueError(f"bpm must be > 0, got {bpm}")
    if dims not in (2, 3):
        raise ValueError(f"dims must be 2 or 3, got {dims}")

    rng = np.random.Generator(np.random.PCG64(seed))
    period = fps * 60.0 / bpm  # beat period in frames
    t = np.arange(frames, dtype=np.float64)
    beat = 2.0 * np.pi * t / period

    # Per-seed choreography: swing amplitudes and phases.
    amp_arm = rng.uniform(0.45, 0.9, size=2)
    amp_elbow = rng.uniform(0.3, 0.7, size=2)
    amp_leg = rng.uniform(0.15, 0.35, size=2)
    ph_arm = rng.uniform(0.0, 2.0 * np.pi, size=2)
    ph_elbow = rng.uniform(0.0, 2.0 * np.pi, size=2)
    ph_leg = rng.uniform(0.0, 2.0 * np.pi, size=2)
    ph_sway = rng.uniform(0.0, 2.0 * np.pi)
    ph_bounce = rng.uniform(0.0, 2.0 * np.pi)
    lean = rng.uniform(-0.12, 0.12)

    # Root: slow sway at 4 beats per cycle plus a per-beat bounce. The
    # bounce |sin| term repeats once per beat (not per half-beat), which
    # is what locks the velocity-magnitude autocorrelation to the beat.
    root_x = 0.5 + 0.04 * np.sin(beat / 4.0 + ph_sway)
    root_y = 0.42 + 0.05 * np.abs(np.sin(np.pi * t / period + ph_bounce))

    pose = np.zeros((frames, 14, 2))
    pelvis = np.stack([root_x, root_y], axis=1)
    pose[:, 0] = pelvis

    torso_ang = lean + 0.06 * np.sin(beat + ph_sway)
    chest = pelvis + _TORSO * _dir(torso_ang + np.pi / 2.0)
    neck = chest + _NECK * _dir(torso_ang + np.pi / 2.0)
    head = neck + _HEAD * _dir(torso_ang + np.pi / 2.0 + 0.2 * np.sin(beat + ph_bounce))
    pose[:, 1], pose[:, 2], pose[:, 3] = chest, neck, head

    for side, (sh, el, wr) in enumerate(((4, 5, 6), (7, 8, 9))):
        sign = -1.0 if side == 0 else 1.0
        shoulder = chest + sign * 0.09 * _dir(torso_ang)
        # Arms hang downward and swing about the vertical at the beat.
        upper_ang = -np.pi / 2.0 + sign * 0.3 + amp_arm[side] * np.sin(beat + ph_arm[side])
        elbow = shoulder + _UPPER_ARM * _dir(upper_ang)
        fore_ang = upper_ang + sign * 0.4 + amp_elbow[side] * np.sin(beat + ph_elbow[side])
        wrist = elbow + _FOREARM * _dir(fore_ang)
        pose[:, sh], pose[:, el], pose[:, wr] = shoulder, elbow, wrist

    for side, (kn, ank) in enumerate(((10, 11), (12, 13))):
        sign = -1.0 if side == 0 else 1.0
        hip = pelvis + sign * _HIP_OFF * _dir(torso_ang)
        thigh_ang = -np.pi / 2.0 + amp_leg[side] * np.sin(beat + ph_leg[side])
        knee = hip + _THIGH * _dir(thigh_ang)
        shin_ang = thigh_ang + 0.25 + 0.5 * amp_leg[side] * np.sin(beat + ph_leg[side] + 0.7)
        ankle = knee + _SHIN * _dir(shin_ang)
        pose[:, kn], pose[:, ank] = knee, ankle

    data, edges = _fit_joint_count(pose, joints)
    if dims == 3:
        depth = 0.03 * np.sin(beat / 2.0 + ph_sway)[:, None] * np.ones((1, joints))
        data = np.concatenate([data, depth[:, :, None]], axis=2)

    audio = _click_track(frames / fps, bpm, sample_rate)
    return SkeletonSequence(data, fps=fps, edges=edges), audio, sample_rate


def _dir(angle: np.ndarray) -> np.ndarray:
    """Unit vectors for angles, stacked as [T, 2]."""
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def _fit_joint_count(pose: np.ndarray, joints: int) -> tuple[np.ndarray, Edges]:
    """Truncate the chain or add keypoints along bones to hit ``joints``."""
    if joints <= 14:
        edges = tuple((a, b) for a, b in BASE_EDGES if a < joints and b < joints)
        return pose[:, :joints].copy(), edges
    T = pose.shape[0]
    data = np.zeros((T, joints, 2))
    data[:, :14] = pose
    for k in range(14, joints):
        a, b = BASE_EDGES[k % len(BASE_EDGES)]
        # Golden-ratio fractions spread extra keypoints along each bone.
        frac = 0.1 + 0.8 * ((k * 0.6180339887498949) % 1.0)
        data[:, k] = pose[:, a] + frac * (pose[:, b] - pose[:, a])
    return data, BASE_EDGES


def _click_track(duration_s: float, bpm: float, sample_rate: int) -> np.ndarray:
    """Mono click track: a short decaying 1 kHz burst on every beat."""
    n = int(round(duration_s * sample_rate))
    audio = np.zeros(n)
    click_len = int(0.03 * sample_rate)
    tt = np.arange(click_len) / sample_rate
    click = 0.7 * np.sin(2.0 * np.pi * 1000.0 * tt) * np.exp(-tt / 0.006)
    step = 60.0 / bpm
    k = 0
    while True:
        start = int(round(k * step * sample_rate))
        if start >= n:
            break
        end = min(n, start + click_len)
        audio[start:end] += click[: end - start]
        k += 1
    return np.clip(audio, -1.0, 1.0)
