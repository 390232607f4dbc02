"""On-disk formats: versioned JSON sequence files and 16-bit mono WAV.

Sequence files are plain JSON so they stay diffable and round-trip
float64 coordinates exactly (Python serializes floats with shortest
round-trip repr). Schema::

    {"version": 1, "fps": 30.0, "joints": J, "dims": D,
     "data": [[[x, y], ...] x J] x T,
     "mask": [[0|1, ...] x J] x T,        # optional
     "edges": [[a, b], ...]}              # optional, for rendering
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError, VersionError
from .skeleton import ConfidenceMask, SkeletonSequence

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LoadedSequence:
    sequence: SkeletonSequence
    mask: ConfidenceMask | None


def save_sequence(path, seq: SkeletonSequence, mask: ConfidenceMask | None = None) -> None:
    """Write a sequence (and optional mask) as a versioned JSON file."""
    if mask is not None and mask.shape != (seq.frames, seq.joints):
        raise ShapeError(
            f"mask shape {mask.shape} does not match sequence frames/joints {(seq.frames, seq.joints)}"
        )
    doc = {
        "version": FORMAT_VERSION,
        "fps": float(seq.fps),
        "joints": seq.joints,
        "dims": seq.dims,
        "data": seq.data.tolist(),
    }
    if mask is not None:
        doc["mask"] = [[int(v) for v in row] for row in mask.mask]
    if seq.edges is not None:
        doc["edges"] = [list(e) for e in seq.edges]
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_sequence(path) -> LoadedSequence:
    """Read a sequence file written by :func:`save_sequence`.

    Raises:
        DataFormatError: On malformed JSON (with line/column), missing or
            mistyped fields, or non-finite coordinates.
        VersionError: If the file declares an unsupported version.
        ShapeError: If a stored mask's shape disagrees with the data.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: expected a JSON object at top level")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported sequence format version {version!r} (expected {FORMAT_VERSION})")
    for key in ("fps", "joints", "dims", "data"):
        if key not in doc:
            raise DataFormatError(f"{path}: missing required field {key!r}")
    try:
        data = np.asarray(doc["data"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: data field is not a numeric [T][J][D] array: {e}") from e
    if data.ndim != 3:
        raise DataFormatError(f"{path}: data field must be [T][J][D], got shape {data.shape}")
    if not np.isfinite(data).all():
        raise DataFormatError(f"{path}: data contains non-finite coordinates")
    if data.shape[1] != int(doc["joints"]) or data.shape[2] != int(doc["dims"]):
        raise DataFormatError(
            f"{path}: header says joints={doc['joints']}, dims={doc['dims']} "
            f"but data has shape {data.shape}"
        )
    edges = None
    if "edges" in doc:
        try:
            edges = tuple((int(a), int(b)) for a, b in doc["edges"])
        except (TypeError, ValueError) as e:
            raise DataFormatError(f"{path}: edges field must be a list of [a, b] pairs: {e}") from e
    try:
        seq = SkeletonSequence(data, fps=float(doc["fps"]), edges=edges)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from e

    mask = None
    if "mask" in doc:
        marr = np.asarray(doc["mask"], dtype=np.float64)
        if marr.shape != (seq.frames, seq.joints):
            raise ShapeError(
                f"{path}: mask shape {marr.shape} does not match data frames/joints "
                f"{(seq.frames, seq.joints)}"
            )
        try:
            mask = ConfidenceMask(marr)
        except ValueError as e:
            raise DataFormatError(f"{path}: {e}") from e
    return LoadedSequence(seq, mask)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM WAV."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"audio must be mono (1-D), got shape {x.shape}")
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV into float samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise DataFormatError(f"{path}: not a readable WAV file: {e}") from e
    if channels != 1:
        raise DataFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise DataFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate
