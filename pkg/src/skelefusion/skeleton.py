"""Skeleton sequences, confidence masks, and masking arithmetic.

A skeleton sequence is a ``[T, J, D]`` array of per-frame joint
coordinates in normalized screen units. A confidence mask is a binary
``[T, J]`` matrix marking which joints are observed; masked joints are
zeroed out of the data and excluded from losses downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError

Edges = tuple[tuple[int, int], ...]


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SkeletonSequence:
    """Immutable time series of joint coordinates.

    Attributes:
        data: Array of shape ``[T, J, D]`` with finite coordinates.
        fps: Frames per second of the motion, > 0.
        edges: Optional joint-chain topology ``((parent, child), ...)``
            used only for rendering; carried through transformations.
    """

    data: np.ndarray
    fps: float = 30.0
    edges: Edges | None = field(default=None, compare=False)

    def __post_init__(self):
        data = _frozen_array(self.data)
        if data.ndim != 3:
            raise ShapeError(f"sequence data must be [T, J, D], got shape {data.shape}")
        T, J, D = data.shape
        if T < 1 or J < 1:
            raise ShapeError(f"sequence needs T >= 1 and J >= 1, got T={T}, J={J}")
        if D not in (2, 3):
            raise ShapeError(f"coordinate dimensionality must be 2 or 3, got {D}")
        if not np.isfinite(data).all():
            raise ValueError("sequence contains non-finite coordinates")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        object.__setattr__(self, "data", data)
        if self.edges is not None:
            edges = tuple((int(a), int(b)) for a, b in self.edges)
            for a, b in edges:
                if not (0 <= a < J and 0 <= b < J):
                    raise ValueError(f"edge ({a}, {b}) references a joint outside 0..{J - 1}")
            object.__setattr__(self, "edges", edges)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def dims(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "SkeletonSequence":
        """Return a copy with new coordinates but the same fps/topology."""
        return SkeletonSequence(data, fps=self.fps, edges=self.edges)


@dataclass(frozen=True)
class ConfidenceMask:
    """Immutable binary presence matrix paired with a sequence.

    ``mask[t, j] == 1`` means joint ``j`` is observed in frame ``t``.
    """

    mask: np.ndarray

    def __post_init__(self):
        mask = _frozen_array(self.mask)
        if mask.ndim != 2:
            raise ShapeError(f"mask must be [T, J], got shape {mask.shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @classmethod
    def all_visible(cls, frames: int, joints: int) -> "ConfidenceMask":
        return cls(np.ones((frames, joints)))

    def visible_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class CorruptionSpec:
    """How to knock joints out of a sequence.

    Attributes:
        missing_rate: Fraction of joint-frames to drop, in [0, 1].
        pattern: ``random-joint`` (independent cells), ``limb-coherent``
            (contiguous joint blocks within a frame), or
            ``temporal-burst`` (one joint over a run of frames).
        seed: RNG seed; fixes the corruption exactly.
    """

    missing_rate: float
    pattern: str = "random-joint"
    seed: int = 0

    PATTERNS = ("random-joint", "limb-coherent", "temporal-burst")

    def __post_init__(self):
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError(f"missing_rate must be in [0, 1], got {self.missing_rate}")
        if self.pattern not in self.PATTERNS:
            raise ValueError(f"unknown corruption pattern {self.pattern!r}; expected one of {self.PATTERNS}")


def make_mask(confidences: np.ndarray, threshold: float) -> ConfidenceMask:
    """Threshold continuous detector confidences into a binary mask.

    A confidence equal to the threshold counts as present (closed rule).

    Args:
        confidences: ``[T, J]`` finite confidence values.
        threshold: Presence cutoff in [0, 1].

    Returns:
        Binary mask with 1 where ``confidences >= threshold``.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.ndim != 2:
        raise ShapeError(f"confidences must be [T, J], got shape {conf.shape}")
    if not np.isfinite(conf).all():
        raise ValueError("confidences contain non-finite values")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return ConfidenceMask((conf >= threshold).astype(np.float64))


def apply_mask(seq: SkeletonSequence, mask: ConfidenceMask) -> SkeletonSequence:
    """Zero out missing joints: ``out[t, j, :] = mask[t, j] * data[t, j, :]``.

    Visible entries come through bit-identical; masked entries become zero.
    """
    if mask.shape != (seq.frames, seq.joints):
        raise ShapeError(
            f"mask shape {mask.shape} does not match sequence frames/joints {(seq.frames, seq.joints)}"
        )
    return seq.with_data(seq.data * mask.mask[:, :, None])


def inject_occlusions(seq: SkeletonSequence, spec: CorruptionSpec) -> tuple[SkeletonSequence, ConfidenceMask]:
    """Corrupt a sequence by dropping joint-frames per the spec's pattern.

    Exactly ``round(missing_rate * T * J)`` cells are zeroed, chosen
    deterministically from the seed. The returned sequence equals
    ``apply_mask(seq, mask)``.
    """
    T, J = seq.frames, seq.joints
    total = T * J
    quota = int(round(spec.missing_rate * total))
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    if spec.pattern == "random-joint":
        flat = rng.permutation(total)[:quota]
        cells = list(zip(flat // J, flat % J))
    elif spec.pattern == "limb-coherent":
        cells = _patch_cells(rng, quota, total, J, lambda: _limb_patch(rng, T, J))
    else:
        cells = _patch_cells(rng, quota, total, J, lambda: _burst_patch(rng, T, J))

    mask = np.ones((T, J))
    for t, j in cells:
        mask[t, j] = 0.0
    cmask = ConfidenceMask(mask)
    return apply_mask(seq, cmask), cmask


def _limb_patch(rng, T: int, J: int) -> list[tuple[int, int]]:
    # A "limb" is a contiguous block of joint indices within one frame.
    size = min(J, int(rng.integers(3, 6)))
    t = int(rng.integers(0, T))
    j0 = int(rng.integers(0, J - size + 1))
    return [(t, j0 + k) for k in range(size)]


def _burst_patch(rng, T: int, J: int) -> list[tuple[int, int]]:
    # One joint missing over a run of consecutive frames.
    length = min(T, int(rng.integers(3, 11)))
    j = int(rng.integers(0, J))
    t0 = int(rng.integers(0, T - length + 1))
    return [(t0 + k, j) for k in range(length)]


def _patch_cells(rng, quota: int, total: int, J: int, draw_patch) -> list[tuple[int, int]]:
    """Accumulate patches until the quota is met, trimmed to exact size."""
    chosen: dict[tuple[int, int], None] = {}
    attempts = 0
    while len(chosen) < quota and attempts < 20 * total:
        for cell in draw_patch():
            if len(chosen) >= quota:
                break
            chosen.setdefault(cell, None)
        attempts += 1
    if len(chosen) < quota:
        # Near rate=1 random patches rarely hit the last free cells; take
        # the remainder in a seeded order instead of spinning.
        for flat in rng.permutation(total):
            if len(chosen) >= quota:
                break
            chosen.setdefault((int(flat) // J, int(flat) % J), None)
    return list(chosen.keys())


def normalize(
    seq: SkeletonSequence, mask: ConfidenceMask | None = None
) -> tuple[SkeletonSequence, np.ndarray, float]:
    """Center on the first frame's visible joints and rescale to unit extent.

    The root is the mean of visible joints in frame 0; the scale is the
    largest per-axis extent over all visible joints in the whole
    sequence. Zero extent (a static point) falls back to scale 1 so the
    transform stays invertible.

    Returns:
        ``(normalized_sequence, root, scale)`` with
        ``normalized = (data - root) / scale``.

    Raises:
        DegenerateInputError: If every joint in frame 0 is masked out.
    """
    if mask is not None and mask.shape != (seq.frames, seq.joints):
        raise ShapeError(
            f"mask shape {mask.shape} does not match sequence frames/joints {(seq.frames, seq.joints)}"
        )
    m = mask.mask if mask is not None else np.ones((seq.frames, seq.joints))
    vis0 = m[0] == 1.0
    if not vis0.any():
        raise DegenerateInputError("cannot normalize: all joints missing in frame 0")
    root = seq.data[0, vis0, :].mean(axis=0)

    vis = m == 1.0
    coords = seq.data[vis]  # [n_visible, D]
    extent = coords.max(axis=0) - coords.min(axis=0)
    scale = float(extent.max())
    if scale == 0.0:
        scale = 1.0
    return seq.with_data((seq.data - root) / scale), root, scale


def denormalize(seq: SkeletonSequence, root: np.ndarray, scale: float) -> SkeletonSequence:
    """Invert :func:`normalize`."""
    return seq.with_data(seq.data * scale + np.asarray(root, dtype=np.float64))
