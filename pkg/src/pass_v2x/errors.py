"""Exception hierarchy shared across the pipeline."""


class PassError(Exception):
    """Base class for all errors raised by this package."""


# geometry
class DegenerateCorrespondence(PassError):
    pass


class PointAtInfinity(PassError):
    pass


class ZeroTimeDelta(PassError):
    pass


# perception
class ZeroAreaBox(PassError):
    pass


# tracking
class NonMonotonicTimestamp(PassError):
    pass


# messages
class QuantizationOverflow(PassError):
    pass


class DecodeError(PassError):
    """Any failure to turn bytes back into a message."""


class UnknownMessageType(DecodeError):
    pass


class TruncatedFrame(DecodeError):
    pass


class FieldOutOfRange(DecodeError, ValueError):
    pass


# pscw
class OutOfProjectionRange(PassError):
    pass


class NonPositiveEpsilon(PassError, ValueError):
    pass


class NonPositiveDeceleration(PassError, ValueError):
    pass


# eval / reporting
class EmptySample(PassError, ValueError):
    pass


class LengthMismatch(PassError, ValueError):
    pass


class ConfigError(PassError):
    """A configuration file is missing, malformed, or names a bad field."""
