"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right
subclass matters: data/parsing problems must be distinguishable from
generic runtime failures.
"""

from __future__ import annotations


class SkeleFusionError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SkeleFusionError, ValueError):
    """Array shapes disagree with what an operation requires."""


class ConfigError(SkeleFusionError, ValueError):
    """Invalid or mismatched configuration."""


class DegenerateInputError(SkeleFusionError, ValueError):
    """Input is structurally valid but degenerate for the operation."""


class SymmetryError(SkeleFusionError, ValueError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class DataFormatError(SkeleFusionError, ValueError):
    """An on-disk artifact could not be parsed or validated."""


class VersionError(DataFormatError):
    """An on-disk artifact declares an unsupported format version."""


class IntegrityError(DataFormatError):
    """An on-disk artifact failed its checksum."""


class DivergenceError(SkeleFusionError, RuntimeError):
    """Training diverged (non-finite or exploding loss).

    Carries the last good checkpoint, when one exists, so callers can
    recover instead of losing the run.
    """

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
