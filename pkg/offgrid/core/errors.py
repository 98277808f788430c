"""
Exception hierarchy for offgrid.
"""


class OffgridError(Exception):
    """Base class for every error raised by offgrid."""


class ProtocolError(OffgridError):
    """Malformed frame or graph stream. `offset` is the byte offset where decoding failed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class OversizeMessage(ProtocolError):
    pass


class UnknownObject(OffgridError, KeyError):
    def __init__(self, guid):
        self.guid = guid
        super().__init__(f"unknown object {guid.hex() if isinstance(guid, bytes) else guid}")

    def __str__(self):
        return self.args[0]


class IllegalState(OffgridError):
    pass


class Conflict(OffgridError):
    pass


class ConfigError(OffgridError):
    pass


class RemoteFailure(OffgridError):
    """An offload could not complete; invoke() falls back to local execution."""


class RemoteError(RemoteFailure):
    """The server answered with REMOTE_ERROR."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(f"{getattr(code, 'name', code)}: {message}")
        self.remote_message = message


class EquivalenceViolation(OffgridError):
    pass
