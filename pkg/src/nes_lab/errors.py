"""Exception hierarchy shared by every module."""


class NesLabError(Exception):
    """Base class for all package errors."""


class DomainError(NesLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InvalidPairingError(DomainError):
    """Pairwise noise given a label twice as a source or as a target."""


class DegenerateGeometryError(DomainError):
    """A class has no spread, so its principal direction is undefined."""


class RegimeError(DomainError):
    """Bound inputs violate the hypotheses under which the bound holds."""


class CorrectionUnavailableError(DomainError):
    """A backward correction needs a well-conditioned transition matrix."""


class NotDifferentiableError(DomainError):
    """Gradient requested for a loss that has none (0-1 loss)."""


class MissingTrackError(NesLabError, KeyError):
    """A dataset lacks the requested label track (clean or noisy)."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing label track"


class IdxFormatError(NesLabError, ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(NesLabError, ValueError):
    """Configuration problems, all collected before anything runs."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class NumericalError(NesLabError, ArithmeticError):
    """Non-finite loss or gradient during training.

    ``runlog`` holds the records of every epoch completed before the failure.
    """

    def __init__(self, message, *, epoch=None, batch=None, loss_kind=None, runlog=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.loss_kind = loss_kind
        self.runlog = runlog


class CheckpointError(NesLabError, OSError):
    """Saving or restoring a model checkpoint failed."""
