"""Exception and warning types shared across the engine."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class GeometryError(ValueError):
    """Block/margin/stride geometry is invalid or misaligned."""


class FormatError(ValueError):
    """A serialized container (weight file, checkpoint sidecar) is malformed."""


class ConfigError(ValueError):
    """A run configuration is internally inconsistent or infeasible."""


class EmptyError(ValueError):
    """A statistics accumulator was finalized before seeing any pixels."""


class NonFiniteError(RuntimeError):
    """The objective returned NaN/Inf. Carries the last finite iterate in ``x``."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class DegenerateStdWarning(RuntimeWarning):
    """A feature channel has zero std while its reference std is nonzero."""
