"""Exception hierarchy shared by every module."""


class FadeError(ValueError):
    """Base class for all errors raised by this package."""


class ChannelMismatch(FadeError):
    pass


class ShapeMismatch(FadeError):
    pass


class NonIntegerOutputShape(FadeError):
    pass


class OddSpatialDims(FadeError):
    pass


class UnsupportedWindow(FadeError):
    pass


class UnnormalizedKernels(FadeError):
    pass


class FtenError(FadeError):
    """Malformed tensor file."""


class BadMagic(FtenError):
    pass


class TruncatedFile(FtenError):
    pass


class NonFiniteData(FtenError):
    pass


class UnknownOp(FadeError):
    pass


class UnknownKind(FadeError):
    pass


class NonFiniteGradient(FadeError):
    pass


class BadSize(FadeError):
    pass
