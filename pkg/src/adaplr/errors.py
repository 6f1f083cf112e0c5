"""Exception hierarchy shared by every module of the engine."""


class AdaplrError(Exception):
    """Base class for all engine errors."""


class NumericError(AdaplrError, ValueError):
    """A non-finite value reached a numeric routine."""


class NumericInputError(NumericError):
    """Non-finite input handed to a public numeric operation."""


class DimensionError(AdaplrError, ValueError):
    """Operand shapes do not conform."""


ShapeError = DimensionError


class LabelError(AdaplrError, ValueError):
    """A class index lies outside ``[0, C)``."""


class ArgumentError(AdaplrError, ValueError):
    """An argument is empty or otherwise unusable."""


class SamplingError(AdaplrError, ValueError):
    """A sampling request cannot be satisfied."""


class StateError(AdaplrError, RuntimeError):
    """An object is used in a state that does not allow the operation."""


class NotReadyError(StateError):
    """Consensus requested before any snapshot was recorded."""


class ConfigError(AdaplrError, ValueError):
    """A run configuration failed validation."""


class FormatError(AdaplrError, ValueError):
    """A serialized file is malformed."""


class GenerationError(AdaplrError, ValueError):
    """A dataset generator was given a degenerate description."""


class NoiseSpecError(AdaplrError, ValueError):
    """A label-noise description is malformed."""


class LayoutError(AdaplrError, ValueError):
    """A grid transform was applied to flat features."""


class TrainingError(AdaplrError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class EmptyHCSError(AdaplrError, RuntimeError):
    """No sample passed the high-confidence threshold."""
