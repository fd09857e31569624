"""Exception hierarchy shared by every module.

Each error carries a CLI exit code so the command line front-end can map
failures without a lookup table.
"""


class EmbedTagError(Exception):
    exit_code = 1


class FormatError(EmbedTagError):
    """Malformed input file. ``line`` is 1-based when known."""

    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TruncatedFile(FormatError):
    pass


class MalformedSyntax(FormatError):
    pass


class NonFiniteVertex(FormatError):
    pass


class BadMagic(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


class DimensionMismatch(FormatError):
    pass


class SpecViolation(EmbedTagError):
    exit_code = 4


class OnesOutOfRange(SpecViolation):
    pass


class InfoProtrudes(SpecViolation):
    pass


class ModeInapplicable(SpecViolation):
    pass


class EmptyMesh(SpecViolation):
    pass


class OpenMesh(SpecViolation):
    pass


class PitchTooCoarse(SpecViolation):
    pass


class WindowOutOfBounds(SpecViolation):
    pass


class UnstableDt(EmbedTagError):
    exit_code = 4


class ImageTooSmall(EmbedTagError):
    pass


class DegenerateHistogram(EmbedTagError):
    pass


class NoContours(EmbedTagError):
    pass


class DecodeError(EmbedTagError):
    exit_code = 2


class NoObjectContour(DecodeError):
    pass


class NoAnchorContour(DecodeError):
    pass


class EmptyRecording(DecodeError):
    pass


class OutOfTable(EmbedTagError):
    pass


class IncompleteCoverage(EmbedTagError):
    exit_code = 3


class IoFailure(EmbedTagError):
    exit_code = 3
