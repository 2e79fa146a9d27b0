"""Exception hierarchy shared across the package."""


class NegosimError(Exception):
    """Base class for all package errors."""


class InsufficientAdjectives(NegosimError):
    pass


class EmptyAdjectiveList(NegosimError):
    pass


class TableFormatError(NegosimError):
    """A bundled or user-supplied data table failed validation."""


class InvalidPriceOrder(NegosimError):
    pass


class ScenarioFileError(NegosimError):
    """One or more scenario entries were rejected.

    ``problems`` holds ``(line, message)`` pairs, one per rejected entry.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "\n".join(f"  line {ln}: {msg}" for ln, msg in self.problems)
        super().__init__(f"{len(self.problems)} scenario entr(y/ies) rejected:\n{lines}")


class ProtocolError(NegosimError):
    """Dialogue history violates the alternating-offers protocol."""


class BackendError(NegosimError):
    pass


class BackendUnavailable(BackendError):
    pass


class BackendRefusal(BackendError):
    pass


class DegenerateInterval(NegosimError):
    pass


class EmptyCorpus(NegosimError):
    pass


class NoSuccesses(NegosimError):
    pass


class LengthMismatch(NegosimError):
    pass


class ConstantSeries(NegosimError):
    pass


class ZeroMarginal(NegosimError):
    pass


class UnparseableReply(NegosimError):
    pass


class MissingItems(NegosimError):
    pass


class ConfigError(NegosimError):
    pass


class CorruptCorpus(NegosimError):
    """A corpus line other than the last one failed to parse."""
