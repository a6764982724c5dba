"""Exception types shared across the package.

Errors fall into two coarse CLI classes: ConfigError (and argparse usage
errors) exit with code 2, everything else derived from TarsMoeError exits
with code 1. Messages carry the concrete identifiers (shapes, byte
offsets, pair ids, parameter names) needed to locate the fault.
"""


class TarsMoeError(Exception):
    """Base class for all package errors."""


class ConfigError(TarsMoeError):
    """Invalid configuration: bad field value, schema violation, misuse."""


class ParameterError(TarsMoeError):
    """A numeric argument is outside its legal domain."""


class DimensionError(TarsMoeError):
    """Array shapes do not line up; message names the offending shapes."""


class EmptySequenceError(DimensionError):
    """A time axis of length zero where at least one step is required."""


class NumericError(TarsMoeError):
    """A non-finite value appeared where the math requires finite input."""


class DegenerateVectorError(TarsMoeError):
    """A zero-norm vector where a direction is required (cosine, unit)."""


class FormatError(TarsMoeError):
    """A binary feature file violates the MFV1 layout.

    ``offset`` is the byte position of the first violated field.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ValidationError(TarsMoeError):
    """Data-level violation: manifest contents, labels, feature values."""


class ManifestParseError(ValidationError):
    """A manifest line is not valid JSON; message names the line number."""


class MissingFeatureError(ValidationError):
    """An expected feature file does not exist on disk."""


class FeatureShapeError(ValidationError):
    """A feature file parsed fine but has the wrong rank or width."""


class NonFiniteFeatureError(ValidationError):
    """A feature file contains NaN or infinity."""


class UndefinedCorrelationError(TarsMoeError):
    """Correlation requested on a constant (or all-tied) input."""


class FreezeContractError(TarsMoeError):
    """A parameter that must stay frozen was trainable, or vice versa."""


class PairEvaluationError(TarsMoeError):
    """An expert failed on one pair; message names pair id and expert."""

    def __init__(self, pair_id: str, expert: str, cause: Exception):
        super().__init__(f"pair {pair_id!r}, expert {expert!r}: {cause}")
        self.pair_id = pair_id
        self.expert = expert
        self.cause = cause
