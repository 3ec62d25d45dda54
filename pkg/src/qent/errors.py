"""Exception hierarchy shared by every layer of the simulator."""


class QentError(Exception):
    """Base class for all simulator errors."""


class ValidationError(QentError, ValueError):
    """An argument violates a documented precondition or invariant."""


class NotEntangledError(ValidationError):
    """The amplitude matrix factors into a product of single-qubit states."""


class QubitLostError(QentError):
    """The addressed qubit was lost to amplitude damping and has no defined state."""


class UnrepresentableOperationError(QentError):
    """The operation would entangle qubits that are stored independently."""


class StaleEntanglementError(QentError):
    """The pair was already measured or reconciled."""


class ProtocolViolationError(QentError):
    """A measurement notice is inconsistent with the pair it refers to."""


class DecodeError(QentError):
    """Bytes could not be decoded into a well-formed message."""

    def __init__(self, message, *, offset=None, field=None):
        super().__init__(message)
        self.offset = offset
        self.field = field


class FramingError(DecodeError):
    """The length-prefixed frame is truncated or oversized."""


class UnsupportedVersionError(DecodeError):
    """The envelope declares a protocol version this node does not speak."""

    def __init__(self, message, *, version=None, session_id=None):
        super().__init__(message, field="version")
        self.version = version
        self.session_id = session_id


class TransferRejected(QentError):
    """The peer refused a register transfer; local state is unchanged."""

    def __init__(self, code, message=""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class RemoteError(QentError):
    """A peer answered a request with an ERROR envelope."""

    def __init__(self, code, message=""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
