"""Exception hierarchy shared by every module.

All errors derive from :class:`HlsedError` so the CLI can map any failure to a
one-line reason.  Where a builtin exception already carries the right meaning
(missing files, bad values) the class also inherits from it.
"""


class HlsedError(Exception):
    """Base class for all package errors."""


# signal
class NotFound(HlsedError, FileNotFoundError):
    pass


class UnsupportedFormat(HlsedError, ValueError):
    pass


class CorruptHeader(HlsedError, ValueError):
    pass


class EmptyClip(HlsedError, ValueError):
    pass


class TooShort(HlsedError, ValueError):
    pass


class RateMismatch(HlsedError, ValueError):
    pass


class InvalidConfig(HlsedError, ValueError):
    pass


# labels
class LabelError(HlsedError, ValueError):
    """A strong-label file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelSyntaxError(LabelError):
    pass


class UnknownClass(LabelError):
    def __init__(self, token, line=None):
        self.token = token
        super().__init__(f"unknown class {token!r}", line)


class NonPositiveDuration(LabelError):
    pass


class OverlapWithinClass(LabelError):
    pass


# model
class ShapeMismatch(HlsedError, ValueError):
    pass


class NonFiniteActivation(HlsedError, FloatingPointError):
    pass


class VersionMismatch(HlsedError, ValueError):
    pass


class ChecksumError(HlsedError, ValueError):
    pass


# train
class NegativeExponent(HlsedError, ValueError):
    pass


class StaleCache(HlsedError, RuntimeError):
    pass


class NonFiniteGradient(HlsedError, FloatingPointError):
    pass


class UnsupportedAugment(HlsedError, ValueError):
    pass


class InvalidParam(HlsedError, ValueError):
    pass


class EmptyDataset(HlsedError, ValueError):
    pass


class DivergedLoss(HlsedError, FloatingPointError):
    pass


# metrics
class DegenerateInterval(HlsedError, ValueError):
    pass


class NoEligibleRecordings(HlsedError, ValueError):
    pass


# pipeline
class InfeasibleSpec(HlsedError, ValueError):
    pass


class MissingAudio(HlsedError, FileNotFoundError):
    pass


class IncompatibleModel(HlsedError, ValueError):
    pass


class MissingStageInput(HlsedError, FileNotFoundError):
    pass
