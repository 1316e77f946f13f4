"""Exception types shared across the library."""


class CastreamError(Exception):
    """Base class for all library errors."""


class DimensionError(CastreamError):
    """Shapes of the operands are incompatible."""


class NonFiniteError(CastreamError):
    """An operation produced NaN or Inf while checked mode is on."""


class MaskError(CastreamError):
    """An attention mask left a query row with no visible position."""


class DomainError(CastreamError):
    """An input value lies outside the operation's admissible range."""


class EvaluationError(CastreamError):
    """A probed function evaluation returned a non-finite value."""


class EmptyInputError(CastreamError):
    """An operation that needs at least one frame received none."""


class VocabularyError(CastreamError):
    """A token id falls outside the model vocabulary."""


class GenerationError(CastreamError):
    """Synthetic data generation cannot satisfy the requested ranges."""


class UndefinedLatencyError(CastreamError):
    """No correctly decoded tokens exist, so corpus latency is undefined."""


class ConfigError(CastreamError):
    """A configuration value is missing or invalid."""


class ExperimentError(CastreamError):
    """A pipeline stage failed; message names the stage and the cause."""
