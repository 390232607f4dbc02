"""Distribution metrics for skeleton motion: FID, diversity, robustness.

FID compares Gaussian fits of per-sequence feature vectors. No learned
feature network is assumed: the default embedding is a deterministic
statistical descriptor (per-joint position mean plus velocity mean and
spread), with an optional mode that uses a trained encoder's posterior
mean instead. Reports always record which feature space was used.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError, SymmetryError
from .skeleton import ConfidenceMask, CorruptionSpec, SkeletonSequence, inject_occlusions

COVARIANCE_SHRINKAGE = 1e-6

# A reconstructor maps (corrupted sequence, mask) -> reconstructed sequence.
Reconstructor = Callable[[SkeletonSequence, ConfidenceMask], SkeletonSequence]


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and covariance of a feature cloud."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ShapeError(f"need mu [k] and sigma [k, k], got {mu.shape} and {sigma.shape}")
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise ValueError("Gaussian statistics contain non-finite values")
        asym = np.abs(sigma - sigma.T).max() if mu.size else 0.0
        if asym > 1e-10 * max(1.0, np.abs(sigma).max()):
            raise SymmetryError(f"covariance is asymmetric by {asym:.3e}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


def feature_embed(seq: SkeletonSequence) -> np.ndarray:
    """Statistical descriptor of one sequence: ``3 * J * D`` features.

    Per joint and axis: mean position, mean frame-to-frame velocity, and
    velocity standard deviation (population).

    Raises:
        DegenerateInputError: For single-frame sequences (no velocity).
    """
    if seq.frames < 2:
        raise DegenerateInputError("velocity features need at least 2 frames")
    vel = np.diff(seq.data, axis=0)
    return np.concatenate(
        [seq.data.mean(axis=0).ravel(), vel.mean(axis=0).ravel(), vel.std(axis=0).ravel()]
    )


def latent_feature_embed(model) -> Callable[[SkeletonSequence], np.ndarray]:
    """Alternative feature space: the trained encoder's posterior mean."""

    def embed(seq: SkeletonSequence) -> np.ndarray:
        mu, _ = model.encode(seq).numpy()
        return mu

    return embed


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Fit mean and (n-1)-denominator covariance to feature rows.

    When there are fewer rows than dimensions the covariance is rank
    deficient; a small ridge keeps downstream matrix products PSD.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"features must be [n, k], got shape {f.shape}")
    n, k = f.shape
    if n < 2:
        raise DegenerateInputError(f"need at least 2 samples for covariance, got {n}")
    mu = f.mean(axis=0)
    centered = f - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    if n < k:
        sigma = sigma + COVARIANCE_SHRINKAGE * np.eye(k)
    return GaussianStats(mu, sigma, n)


def psd_sqrt(a: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (numerical noise) are clamped to zero, so the
    result satisfies ``B @ B ~= A`` for any nearly PSD input.

    Raises:
        SymmetryError: If the input is asymmetric beyond ``sym_tol``
            (relative to its largest entry).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"need a square matrix, got shape {a.shape}")
    asym = np.abs(a - a.T).max()
    if asym > sym_tol * max(1.0, np.abs(a).max()):
        raise SymmetryError(f"matrix is asymmetric by {asym:.3e} (tolerance {sym_tol})")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    root = vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    return 0.5 * (root + root.T)


def fid(real: GaussianStats, gen: GaussianStats) -> float:
    """Frechet distance between two Gaussian fits.

    The cross term uses the symmetrized product trick:
    ``Tr((S_r S_g)^1/2) = Tr((sqrt(S_r) S_g sqrt(S_r))^1/2)``, keeping
    every square root in symmetric-PSD land. Tiny negative totals from
    rounding clamp to zero.
    """
    if real.dim != gen.dim:
        raise ShapeError(f"feature dimensions differ: {real.dim} vs {gen.dim}")
    dmu = real.mu - gen.mu
    root_r = psd_sqrt(real.sigma)
    inner = root_r @ gen.sigma @ root_r
    cross = np.trace(psd_sqrt(0.5 * (inner + inner.T)))
    value = float(dmu @ dmu + np.trace(real.sigma) + np.trace(gen.sigma) - 2.0 * cross)
    return max(0.0, value)


def diversity(sequences: Sequence[SkeletonSequence]) -> float:
    """Mean per-sequence spatial-temporal variance of joint positions.

    Each sequence contributes the mean over (frame, joint, axis) of the
    squared deviation from its own mean joint position; the score is the
    average over the set. Scaling all coordinates by c scales the score
    by c^2.
    """
    if len(sequences) < 1:
        raise ValueError("need at least one sequence")
    shape = sequences[0].data.shape
    total = 0.0
    for seq in sequences:
        if seq.data.shape != shape:
            raise ShapeError(f"sequence shapes differ: {seq.data.shape} vs {shape}")
        center = seq.data.mean(axis=(0, 1))
        total += float(((seq.data - center) ** 2).mean())
    return total / len(sequences)


@dataclass(frozen=True)
class SweepCell:
    rate: float
    config: str
    seed: int
    fid: float


@dataclass(frozen=True)
class SweepReport:
    """FID-per-missing-rate table across reconstructor configurations."""

    cells: tuple[SweepCell, ...]
    feature_space: str

    def fid_table(self) -> dict[str, dict[float, float]]:
        """Mean FID over seeds, keyed by config then rate."""
        table: dict[str, dict[float, list[float]]] = {}
        for c in self.cells:
            table.setdefault(c.config, {}).setdefault(c.rate, []).append(c.fid)
        return {
            cfg: {rate: float(np.mean(vals)) for rate, vals in rates.items()}
            for cfg, rates in table.items()
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["rate", "config", "seed", "fid", "feature_space"])
            for c in self.cells:
                writer.writerow([c.rate, c.config, c.seed, repr(c.fid), self.feature_space])

    def to_json(self, path) -> None:
        doc = {
            "feature_space": self.feature_space,
            "fid_by_config": {
                cfg: {str(rate): value for rate, value in rates.items()}
                for cfg, rates in self.fid_table().items()
            },
            "cells": [
                {"rate": c.rate, "config": c.config, "seed": c.seed, "fid": c.fid}
                for c in self.cells
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def robustness_sweep(
    reconstructors: dict[str, Reconstructor],
    dataset: Sequence[SkeletonSequence],
    rates: Sequence[float] = (0.05, 0.10, 0.15, 0.20),
    seeds: Sequence[int] = (0,),
    pattern: str = "random-joint",
    feature_fn: Callable[[SkeletonSequence], np.ndarray] | None = None,
    feature_space: str = "descriptor",
) -> SweepReport:
    """Corrupt, reconstruct, and score FID against the clean set.

    For every (seed, rate) cell each sequence is corrupted with its own
    derived occlusion seed, run through each reconstructor, and the
    reconstructed set's Gaussian fit is compared to the clean set's.
    Fully deterministic for a fixed seed list.
    """
    if feature_fn is None:
        feature_fn = feature_embed
    clean = gaussian_stats(np.stack([feature_fn(s) for s in dataset]))
    cells: list[SweepCell] = []
    for seed in seeds:
        for ri, rate in enumerate(rates):
            corrupted = []
            for i, seq in enumerate(dataset):
                cell_seed = int(
                    np.random.SeedSequence([int(seed), ri, i]).generate_state(1)[0]
                )
                corrupted.append(inject_occlusions(seq, CorruptionSpec(rate, pattern, cell_seed)))
            for name, reconstruct in reconstructors.items():
                feats = np.stack(
                    [feature_fn(reconstruct(cseq, cmask)) for cseq, cmask in corrupted]
                )
                cells.append(SweepCell(rate, name, seed, fid(clean, gaussian_stats(feats))))
    return SweepReport(tuple(cells), feature_space)
