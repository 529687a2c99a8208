"""Exception types raised across the engine."""


class XvaError(Exception):
    """Base class for engine errors."""


class ConfigurationError(XvaError, ValueError):
    """Invalid model, basis, credit, or run configuration."""


class ShockFileError(ConfigurationError):
    """Malformed shock file. ``lineno`` points at the offending line."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class InputError(XvaError, ValueError):
    """Bad numerical input, e.g. a non-finite regression target."""


class AuditError(XvaError):
    """A conditioning set does not belong to the portfolio it is applied to."""


class CubeMismatchError(XvaError):
    """Two objects were built on different scenario cubes."""


class UnsupportedTradeError(XvaError):
    """No closed form exists for the requested (trade, model) pair."""


class NonDeterministicPipelineError(XvaError):
    """Repeated base evaluations of a bump pipeline disagree."""


class RankDeficiencyWarning(UserWarning):
    """Design matrix singular values fell below the truncation threshold."""


class RankCollapseError(XvaError):
    """A regression design matrix has no usable singular values."""
