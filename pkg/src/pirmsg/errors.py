"""Exception types shared across the package."""


class PirMsgError(Exception):
    """Base class for all package errors."""


class AuthFailure(PirMsgError):
    """Authenticated decryption or verification failed."""


class InvalidIndex(PirMsgError, IndexError):
    pass


class LengthMismatch(PirMsgError, ValueError):
    pass


class InvalidConfig(PirMsgError, ValueError):
    pass


class InsertOverflow(PirMsgError):
    """Cuckoo eviction chain exceeded its bound; one item was dropped."""


class MessageTooLarge(PirMsgError, ValueError):
    pass


class NotFound(PirMsgError):
    """No slot in a bucket opened to the requested (handle, seqNo)."""


class DecodeError(PirMsgError, ValueError):
    """A byte string could not be decoded into a wire value."""


class RateLimited(PirMsgError):
    pass


class Malformed(PirMsgError, ValueError):
    pass


class EpochUnavailable(PirMsgError):
    pass


class HandshakeError(PirMsgError):
    pass


class ParseError(PirMsgError, ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno
