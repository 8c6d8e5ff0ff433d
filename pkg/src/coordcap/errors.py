"""Exception classes shared across the toolkit."""


class CoordcapError(Exception):
    """Base class for all toolkit errors."""


class InputError(CoordcapError, ValueError):
    """Malformed or inconsistent input (bad alphabet, mismatched lengths, ...)."""


class PreconditionError(InputError):
    """An operation's documented precondition does not hold."""


class ResourceError(CoordcapError, RuntimeError):
    """An enumeration or allocation guard was exceeded."""
