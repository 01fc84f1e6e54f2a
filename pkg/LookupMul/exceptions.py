class LookupMulError(Exception):
    message = "LookupMul error"
    exit_code = 2

    def __init__(self, message=None):
        if message is not None:
            self.message = message
        super().__init__(self.message)


class ShapeMismatch(LookupMulError):
    message = "Shape mismatch"


class InvalidArgument(LookupMulError):
    message = "Invalid argument"


class DegenerateInput(LookupMulError):
    message = "Degenerate input"


class LayerStateError(LookupMulError):
    message = "Layer is in the wrong state for this operation"


class SingularSystem(LookupMulError):
    message = "Singular linear system"
    exit_code = 3


class NumericalFailure(LookupMulError):
    message = "Numerical failure"
    exit_code = 3


class DatasetNotFound(LookupMulError):
    message = "Dataset file not found"


class BadMagic(LookupMulError):
    message = "Bad magic number"


class TruncatedFile(LookupMulError):
    message = "Truncated file"


class CountMismatch(LookupMulError):
    message = "Record count mismatch"


class ChecksumError(LookupMulError):
    message = "Checksum mismatch"


class VersionError(LookupMulError):
    message = "Unsupported archive version"
