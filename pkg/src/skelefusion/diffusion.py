"""Latent residual diffusion with optional audio conditioning.

The refinement model predicts a residual from the current latent, a
learned step embedding, and a pooled audio feature vector (or a learned
null vector when no audio is given). One update is a plain subtraction
of the predicted residual; training matches the increments of a
noised trajectory whose index runs from clean (0) to fully noised (T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .errors import ConfigError, ShapeError
from .skeleton import SkeletonSequence
from .st_vae import SpatioTemporalVAE

AUDIO_FEATURE_DIM = 35


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels, largest first.

    ``sigmas[0]`` is the level of the fully noised end of a trajectory;
    the last entry may be zero.
    """

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise ValueError(f"sigmas must be a non-empty 1-D array, got shape {s.shape}")
        if not np.isfinite(s).all() or (s < 0.0).any():
            raise ValueError("sigmas must be finite and nonnegative")
        if s.size > 1 and not (np.diff(s) < 0.0).all():
            raise ValueError("sigmas must be strictly decreasing")
        s.flags.writeable = False
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self) -> int:
        return self.sigmas.size

    @classmethod
    def geometric(cls, steps: int = 50, sigma_max: float = 1.0, sigma_min: float = 0.01) -> "NoiseSchedule":
        if steps == 1:
            return cls(np.array([sigma_max]))
        return cls(np.geomspace(sigma_max, sigma_min, steps))


@dataclass(frozen=True)
class DiffusionTrajectory:
    """States ``[steps + 1, latent_dim]`` from clean (row 0) to noised."""

    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ShapeError(f"trajectory must be [steps + 1, latent_dim], got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("trajectory contains non-finite values")
        s.flags.writeable = False
        object.__setattr__(self, "states", s)

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class DiffusionConfig:
    latent_dim: int
    steps: int = 50
    hidden_dim: int = 64
    time_dim: int = 16
    audio_dim: int = AUDIO_FEATURE_DIM

    def __post_init__(self):
        for name in ("latent_dim", "steps", "hidden_dim", "time_dim", "audio_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


def init_denoiser_params(config: DiffusionConfig, seed: int = 0) -> dict[str, Tensor]:
    """Residual MLP parameters; the output layer starts at exactly zero."""
    rng = np.random.Generator(np.random.PCG64(seed))
    in_dim = config.latent_dim + config.time_dim + config.audio_dim
    h = config.hidden_dim

    def weight(fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return {
        "den.time_embed": weight(config.time_dim, config.steps, config.time_dim),
        "den.null_audio": weight(config.audio_dim, config.audio_dim),
        "den.l1.w": weight(in_dim, in_dim, h),
        "den.l1.b": Tensor(np.zeros(h), requires_grad=True),
        "den.l2.w": weight(h, h, h),
        "den.l2.b": Tensor(np.zeros(h), requires_grad=True),
        "den.out.w": Tensor(np.zeros((h, config.latent_dim)), requires_grad=True),
        "den.out.b": Tensor(np.zeros(config.latent_dim), requires_grad=True),
    }


def build_trajectory(z0: np.ndarray, schedule: NoiseSchedule, seed: int) -> DiffusionTrajectory:
    """Noise a clean latent step by step with fresh seeded Gaussians.

    Row ``t`` carries noise at level ``sigmas[steps - t]``, so the last
    row sits at ``sigmas[0]`` (fully noised) and row 0 is ``z0`` itself.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    n = schedule.steps
    states = np.empty((n + 1, z0.size))
    states[0] = z0
    for t in range(1, n + 1):
        states[t] = z0 + schedule.sigmas[n - t] * rng.standard_normal(z0.size)
    return DiffusionTrajectory(states)


def _audio_rows(audio, n: int, params) -> Tensor:
    """Conditioning rows [n, audio_dim]: given features or the null vector."""
    if audio is None:
        return params["den.null_audio"].reshape(1, -1) * np.ones((n, 1))
    a = np.asarray(audio, dtype=np.float64).reshape(1, -1)
    return Tensor(np.repeat(a, n, axis=0))


def denoise_residual_batch(z: np.ndarray, t_idx: np.ndarray, audio, params) -> Tensor:
    """Predicted residuals for a batch of (state, step) pairs."""
    z = np.asarray(z, dtype=np.float64)
    t_idx = np.asarray(t_idx, dtype=np.intp)
    steps = params["den.time_embed"].shape[0]
    if (t_idx < 0).any() or (t_idx >= steps).any():
        raise ValueError(f"step indices must be in 0..{steps - 1}")
    x = concat(
        [Tensor(z), params["den.time_embed"][t_idx], _audio_rows(audio, z.shape[0], params)],
        axis=-1,
    )
    h = (x @ params["den.l1.w"] + params["den.l1.b"]).gelu()
    h = (h @ params["den.l2.w"] + params["den.l2.b"]).gelu()
    return h @ params["den.out.w"] + params["den.out.b"]


def denoise_residual(z_t: np.ndarray, t: int, audio, params) -> np.ndarray:
    """Single-state residual prediction."""
    return denoise_residual_batch(np.asarray(z_t)[None], np.array([t]), audio, params).data[0]


def step(z_t: np.ndarray, t: int, audio, params) -> np.ndarray:
    """One refinement update: subtract the predicted residual, nothing else."""
    return np.asarray(z_t, dtype=np.float64) - denoise_residual(z_t, t, audio, params)


def diffusion_loss(trajectory: DiffusionTrajectory, audio, params) -> Tensor:
    """Sum of squared mismatches between residuals and trajectory increments.

    Zero exactly when the model reproduces every increment; with a
    zero-initialized output layer it equals the trajectory's own
    sum of squared increments.
    """
    states = trajectory.states
    n = trajectory.steps
    residual = denoise_residual_batch(states[:-1], np.arange(n), audio, params)
    mismatch = residual + (states[1:] - states[:-1])
    return (mismatch * mismatch).sum()


def initial_noise(schedule: NoiseSchedule, latent_dim: int, seed: int) -> np.ndarray:
    """Seeded starting point for sampling: N(0, sigmas[0]^2 I)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return schedule.sigmas[0] * rng.standard_normal(latent_dim)


def refine_latent(z: np.ndarray, schedule: NoiseSchedule, audio, params) -> np.ndarray:
    """Apply the update rule for t = steps-1 down to 0."""
    z = np.asarray(z, dtype=np.float64)
    for t in range(schedule.steps - 1, -1, -1):
        z = step(z, t, audio, params)
    return z


def sample(
    audio,
    schedule: NoiseSchedule,
    params,
    seed: int,
    frames: int,
    decoder: SpatioTemporalVAE,
    fps: float = 30.0,
) -> SkeletonSequence:
    """Draw noise, refine it through all steps, decode to a sequence."""
    z = initial_noise(schedule, decoder.config.latent_dim, seed)
    z = refine_latent(z, schedule, audio, params)
    return decoder.decode(z, frames, fps=fps)
