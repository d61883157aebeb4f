"""Exception types shared across the package."""


class LipsortError(Exception):
    """Base class for all errors raised by lipsort."""


class InvalidArgument(LipsortError, ValueError):
    pass


class OutOfDomain(LipsortError, ValueError):
    pass


class CapacityError(LipsortError):
    """An enumeration or grid would exceed its configured size guard."""


class InfeasibleSeparation(LipsortError, ValueError):
    pass


class NotInClassG(LipsortError, ValueError):
    """A hyperplane gradient has L1 norm above 1, so the compiler cannot keep unit weight norms."""


class DegenerateGradient(LipsortError, ValueError):
    pass


class TrainingDiverged(LipsortError, FloatingPointError):
    pass


class ParseError(LipsortError, ValueError):
    """Malformed model, lattice or dataset file.

    ``line`` is 1-based when known; ``offset`` is a byte offset for binary formats.
    """

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class VersionError(ParseError):
    pass


class FormatError(ParseError):
    pass


class ConsistencyError(ParseError):
    pass
