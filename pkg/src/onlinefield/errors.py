"""Exception classes shared across the package."""


class InvalidArgument(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class ProtocolError(Exception):
    """Malformed bytes on the wire or in a packet file."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ReplayAbort(RuntimeError):
    pass


class PreconditionViolation(RuntimeError):
    pass


class StreamTimeout(RuntimeError):
    pass
