"""Exception hierarchy shared by every seqrec module."""


class SeqRecError(Exception):
    """Root of all errors raised by seqrec."""


class DimensionError(SeqRecError, ValueError):
    """Operand shapes do not agree."""


class ItemIndexError(SeqRecError, IndexError):
    """An item or row index lies outside its table."""


class DomainError(SeqRecError, ValueError):
    """A pointwise function was applied outside its domain."""


class ContractError(SeqRecError, ValueError):
    """A documented precondition was violated."""


class DataFormatError(SeqRecError, ValueError):
    """Input data could not be parsed."""


class NonFiniteLossError(SeqRecError, ArithmeticError):
    """A training loss became NaN or infinite."""

    def __init__(self, component: str, value: float):
        self.component = component
        self.value = value
        super().__init__(f"non-finite {component}: {value}")


class CheckpointFormatError(SeqRecError, ValueError):
    """A checkpoint or cache file is unreadable or carries the wrong format tag."""


class ConfigError(SeqRecError, ValueError):
    """The run configuration is invalid."""
