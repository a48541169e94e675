"""Exception types shared across the package."""


class HssTreeError(Exception):
    """Base class for every error raised by this package."""


class DomainError(HssTreeError, ValueError):
    """An input violates a documented precondition (range, width, dimension)."""


class ProtocolMisuseError(HssTreeError):
    """Operands belonging to different servers or key sets were mixed."""


class ConversionError(HssTreeError):
    """Share conversion failed; signals a malformed group element or modulus."""


class DecodeError(HssTreeError):
    """A byte payload could not be decoded."""


class IngestionError(HssTreeError):
    """A model document failed validation."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class UnsupportedModulusError(HssTreeError):
    """Share output was requested under a modulus other than N."""


class SetupError(HssTreeError):
    """Key generation failed after the bounded number of retries."""


class VerificationRejected(HssTreeError):
    """Result reconstruction rejected the servers' responses.

    ``reason`` is one of the REASON_* codes so callers can distinguish a
    failed proof check from an ill-formed set of path costs.
    """

    REASON_NO_ZERO = "no-zero-cost"
    REASON_AMBIGUOUS = "ambiguous-zero-cost"
    REASON_MAC_MISMATCH = "mac-mismatch"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason


class TransportError(HssTreeError):
    """A network link failed. ``link`` names the failing link."""

    def __init__(self, link: str, message: str):
        super().__init__(f"{link}: {message}")
        self.link = link
