"""Exception hierarchy shared by every layer of the stack."""


class PbnError(Exception):
    """Base class for all errors raised by this package."""


class Signal(PbnError):
    """A non-fatal outcome the caller is expected to log and move past.

    Stale sequence numbers, stale document revisions and repeated joins are
    reported this way so callers can tell them apart from real failures.
    """
