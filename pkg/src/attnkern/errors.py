"""Exception hierarchy shared by every module and the CLI."""


class AttnKernError(Exception):
    """Base class; the CLI prints ``type(err).__name__`` as the error class."""


class ArgumentError(AttnKernError, ValueError):
    pass


class NumericalError(AttnKernError, ArithmeticError):
    """Raised on overflow, non-finite results or failed factorizations.

    ``index`` names the offending feature / parameter when known and
    ``pivot`` carries the smallest pivot of a failed factorization.
    """

    def __init__(self, message, index=None, pivot=None):
        super().__init__(message)
        self.index = index
        self.pivot = pivot


class FormatError(AttnKernError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ResourceError(AttnKernError, MemoryError):
    pass
