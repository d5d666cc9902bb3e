"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config/usage problems exit 1,
file IO and format problems exit 2, numerical failures exit 3.
"""


class TrnError(Exception):
    """Base class for all errors raised by this package."""


class InputError(TrnError):
    """An operation rejected its input (bad dimensions, bad arguments)."""


class ConfigError(TrnError):
    """A run configuration failed validation."""


class FormatError(TrnError):
    """A binary or text artifact violates its documented format.

    ``offset`` is the byte offset of the first violation, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CombinatorialLimitError(InputError):
    """An enumeration request exceeded the combinatorial guard."""


class TrainingDivergedError(TrnError):
    """Training produced a non-finite loss or gradient.

    ``step`` identifies the offending optimization step, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
