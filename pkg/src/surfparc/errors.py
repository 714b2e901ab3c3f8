"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end and a
``details`` dict that is emitted verbatim when JSON error output is requested.
"""


class SurfParcError(Exception):
    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class ValidationError(SurfParcError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 1


class OrphanVertexError(ValidationError):
    """Points with no cortical voxel inside the search cap."""

    def __init__(self, message, vertices):
        super().__init__(message, vertices=[int(v) for v in vertices])
        self.vertices = [int(v) for v in vertices]


class DegenerateGeometryError(ValidationError):
    pass


class FormatError(SurfParcError):
    """A file could not be parsed. ``offset`` is the byte offset of the problem."""

    exit_code = 2

    def __init__(self, message, offset=None, **details):
        if offset is not None:
            details["offset"] = int(offset)
        super().__init__(message, **details)
        self.offset = offset


class UnknownMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class IndexRangeError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class ConvergenceError(SurfParcError):
    exit_code = 3

    def __init__(self, message, report=None, **details):
        super().__init__(message, **details)
        self.report = report

    def to_dict(self):
        out = super().to_dict()
        if self.report is not None and hasattr(self.report, "to_dict"):
            out["details"] = {**out["details"], "report": self.report.to_dict()}
        return out
