"""Exception hierarchy shared by all madcrow modules."""


class MadcrowError(Exception):
    """Base class for every error raised by this package."""


class UnknownCall(MadcrowError, LookupError):
    pass


class MixedStreams(MadcrowError, ValueError):
    pass


class UnsortedInput(MadcrowError, ValueError):
    pass


class PolicyError(MadcrowError, ValueError):
    """A system call was seen on a guest stream while the default policy is active."""


class ParseError(MadcrowError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class TooFewSequences(MadcrowError, ValueError):
    pass


class DegenerateSignature(MadcrowError, ValueError):
    pass


class UnknownStream(MadcrowError, LookupError):
    pass


class DuplicateId(MadcrowError, ValueError):
    pass


class AlphabetMismatch(MadcrowError, ValueError):
    pass


class StorageError(MadcrowError, OSError):
    pass


class VersionError(MadcrowError, ValueError):
    pass


class CorruptEntry(ParseError):
    pass


class PlanOutOfRange(MadcrowError, ValueError):
    pass


class UnknownScenario(MadcrowError, LookupError):
    pass
