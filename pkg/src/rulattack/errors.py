"""Exception hierarchy shared across the package.

Two branches matter for the CLI exit-code contract: ``DataError`` covers
unreadable or malformed inputs (exit code 2), ``DomainError`` covers
well-formed inputs that violate an operation's contract (exit code 3).
"""


class RulAttackError(Exception):
    """Base class for all package errors."""


class DataError(RulAttackError):
    """Input files missing, unreadable, or malformed."""


class DomainError(RulAttackError):
    """Valid input rejected by an operation's contract."""


# -- data ingestion ----------------------------------------------------------

class DataNotFound(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonContiguousCycles(DataError):
    def __init__(self, unit_id, message=""):
        super().__init__(f"unit {unit_id}: {message or 'cycle numbers skip'}")
        self.unit_id = unit_id


class CacheFormatError(DataError):
    pass


class AllChannelsConstant(DomainError):
    pass


class DegenerateChannel(DomainError):
    pass


class TooShort(DomainError):
    def __init__(self, unit_id, have, need):
        super().__init__(f"engine {unit_id} has {have} cycles, need >= {need}")
        self.unit_id = unit_id


# -- tensor core -------------------------------------------------------------

class ShapeMismatch(DomainError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")
        self.shapes = shapes


class NodeNotOnTape(DomainError):
    pass


class NonFiniteResult(DomainError):
    pass


# -- models ------------------------------------------------------------------

class InvalidSpec(DomainError):
    pass


class Diverged(DomainError):
    pass


class CorruptCheckpoint(DataError):
    pass


class VersionMismatch(DataError):
    pass


# -- attacks / evaluation ----------------------------------------------------

class EpsilonOutOfRange(DomainError):
    pass


class EmptyInput(DomainError):
    pass
