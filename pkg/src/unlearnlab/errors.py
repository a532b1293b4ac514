"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, JudgeUnavailableError -> 4.
"""


class UnlearnLabError(Exception):
    """Base class for all package errors."""


class ConfigError(UnlearnLabError):
    """Invalid configuration value or hyperparameter out of range."""


class ContractError(UnlearnLabError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Operand shapes are incompatible for the requested operation."""


class DataError(UnlearnLabError):
    """Input data is empty, misaligned, or otherwise unusable."""


class VocabError(DataError):
    """Token or word is not covered by the vocabulary."""


class LengthError(DataError):
    """Sequence does not fit the model's context window."""


class CapabilityError(UnlearnLabError):
    """The operation refuses to run at this scale (e.g. kernel param cap)."""


class JudgeParseError(UnlearnLabError):
    """Judge reply did not contain a usable in-range score."""


class JudgeUnavailableError(UnlearnLabError):
    """Judge endpoint kept failing after all retries.

    Carries the last raw reply (or transport error text) in ``last_reply``.
    """

    def __init__(self, message, last_reply=None):
        super().__init__(message)
        self.last_reply = last_reply
