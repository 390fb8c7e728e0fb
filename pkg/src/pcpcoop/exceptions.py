"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class PcpError(Exception):
    """Base class for all package errors."""


class ValidationError(PcpError, ValueError):
    """Bad argument or value (CLI exit code 1)."""


class DataError(PcpError):
    """Input data is unusable: gaps, misalignment, malformed rows (CLI exit code 2)."""


class ParseError(DataError):
    pass


class GapError(DataError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"missing hourly timestamps: {shown}{more}")


class AlignmentError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class HorizonError(DataError):
    pass


class PreconditionError(ValidationError):
    pass


class SettlementInconsistencyError(PcpError):
    """Raised when settlement arithmetic breaks an invariant it should guarantee."""
