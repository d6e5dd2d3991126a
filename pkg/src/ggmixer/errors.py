"""Exception hierarchy shared across the package."""


class GGMixerError(Exception):
    """Base class for all package errors."""


class ShapeError(GGMixerError, ValueError):
    pass


class ParameterError(GGMixerError, ValueError):
    pass


class UsageError(GGMixerError, RuntimeError):
    pass


class NumericError(GGMixerError, FloatingPointError):
    pass


class TopologyError(GGMixerError, ValueError):
    pass


class ContractError(GGMixerError, ValueError):
    pass


class ConfigError(GGMixerError, ValueError):
    pass


class ProtocolError(GGMixerError, ValueError):
    pass


class MotionIOError(GGMixerError, IOError):
    """Base class for motion/checkpoint file errors."""


class MagicError(MotionIOError):
    pass


class VersionError(MotionIOError):
    pass


class TruncationError(MotionIOError):
    pass


class DimensionError(MotionIOError):
    pass


class CheckpointShapeError(MotionIOError):
    pass
