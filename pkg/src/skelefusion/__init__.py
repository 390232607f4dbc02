"""Skeleton motion reconstruction and audio-driven generation toolkit."""

import os as _os

# Cap BLAS threads before numpy spins up its pools. The matrices here
# are small enough that thread fan-out only adds overhead, and a fixed
# count keeps runs reproducible across machines. SKELEFUSION_THREADS
# overrides; explicitly set BLAS variables are left alone.
_limit = _os.environ.get("SKELEFUSION_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _limit)

from . import audio, autodiff, diffusion, errors, metrics, seqio, skeleton, st_vae, synth, training  # noqa: E402
from .skeleton import ConfidenceMask, CorruptionSpec, SkeletonSequence  # noqa: E402
from .st_vae import ModelConfig, SpatioTemporalVAE  # noqa: E402
from .training import Checkpoint, TrainConfig, TrainItem  # noqa: E402

__all__ = [
    "audio",
    "autodiff",
    "diffusion",
    "errors",
    "metrics",
    "seqio",
    "skeleton",
    "st_vae",
    "synth",
    "training",
    "ConfidenceMask",
    "CorruptionSpec",
    "SkeletonSequence",
    "ModelConfig",
    "SpatioTemporalVAE",
    "Checkpoint",
    "TrainConfig",
    "TrainItem",
]
