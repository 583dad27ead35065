"""Exception hierarchy shared by every glottkit module."""

from typing import Any, Optional


class GlottkitError(Exception):
    """Base class for all errors raised by glottkit"""
    pass


# Audio I/O
class MissingFileError(GlottkitError):
    pass


class UnsupportedEncodingError(GlottkitError):
    pass


class CorruptHeaderError(GlottkitError):
    pass


class ClippedSamplesError(GlottkitError):
    pass


class IoError(GlottkitError):
    """Raised when an output file cannot be written"""
    pass


# Signal processing
class LagTooLargeError(GlottkitError):
    pass


class SingularAutocorrelationError(GlottkitError):
    pass


class FrameTooShortError(GlottkitError):
    pass


class BadWindowError(GlottkitError):
    pass


class InsufficientVoicingError(GlottkitError):
    pass


class NoFramesError(GlottkitError):
    pass


class UnstableTractError(GlottkitError):
    pass


# Fold models and estimation
class NumericalOverflowError(GlottkitError):
    """Integration produced a non-finite state; `partial` holds the steps recorded so far"""

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial


class DegenerateFlowError(GlottkitError):
    pass


class UnvoicedTargetError(GlottkitError):
    pass


class NoCycleDetectedError(GlottkitError):
    pass


# Classifiers
class SingleClassDataError(GlottkitError):
    pass


class DimensionMismatchError(GlottkitError):
    pass


# Configuration
class ConfigError(GlottkitError):
    pass


class LabelFileError(GlottkitError):
    """Malformed frame table or label sidecar"""
    pass
