"""Exception hierarchy.

Everything raised on bad input derives from :class:`PillarError`, which is
also a ``ValueError`` so callers that only care about "bad input" can catch
that.
"""


class PillarError(ValueError):
    pass


# -- file formats ---------------------------------------------------------

class FormatError(PillarError):
    """Malformed binary file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class IoFailure(PillarError, OSError):
    pass


class LineError(PillarError):
    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ParseError(LineError):
    pass


class NegativeLabel(LineError):
    pass


class DuplicateIndex(LineError):
    pass


class UnknownRole(LineError):
    pass


class IndexOutOfRange(LineError):
    pass


class InvalidSpec(PillarError):
    pass


# -- kernels --------------------------------------------------------------

class DimensionMismatch(PillarError):
    pass


class ZeroVariance(PillarError):
    pass


class DegenerateDiagonal(PillarError):
    pass


class SizeMismatch(PillarError):
    pass


class NegativeWeight(PillarError):
    pass


# -- svm / mkl ------------------------------------------------------------

class ShapeMismatch(PillarError):
    pass


class SingleClass(PillarError):
    pass


class EmptyClass(PillarError):
    def __init__(self, class_id):
        self.class_id = class_id
        super().__init__(f"class {class_id} has no training samples")


class NoConvergence(PillarError):
    """Raised only when a caller escalates a non-converged solve (``--strict``)."""


class KernelMismatch(PillarError):
    pass


class AllKernelsInactive(PillarError):
    pass


# -- lp -------------------------------------------------------------------

class MalformedProblem(PillarError):
    pass


# -- fisher ---------------------------------------------------------------

class TooFewSamples(PillarError):
    pass


class DegenerateComponent(PillarError):
    pass


class DimMismatch(PillarError):
    pass


class EmptyDescriptorSet(PillarError):
    pass


# -- evaluation -----------------------------------------------------------

class LengthMismatch(PillarError):
    pass


class Empty(PillarError):
    pass


class LabelOutOfRange(PillarError):
    pass
