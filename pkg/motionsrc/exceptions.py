"""Named errors raised across motionsrc.

Every error carries the process exit code the command line reports for it,
so library code never calls sys.exit itself.
"""


class MotionSrcError(Exception):
    exit_code = 1


class UsageError(MotionSrcError):
    exit_code = 2


class ConfigError(MotionSrcError):
    exit_code = 2


class MissingDataError(MotionSrcError):
    exit_code = 3


class EmptyDatasetError(MissingDataError):
    pass


class DimensionError(MotionSrcError, ValueError):
    exit_code = 4


class AlignmentError(MotionSrcError):
    exit_code = 5


class LengthError(AlignmentError, ValueError):
    pass


class CoverageError(AlignmentError):
    pass


class DegeneracyError(MotionSrcError, ValueError):
    pass


class NormalizationError(MotionSrcError, ValueError):
    pass


class TopologyError(MotionSrcError):
    pass


class DivisionGuardError(MotionSrcError, ZeroDivisionError):
    pass


class CheckpointError(MotionSrcError):
    pass


class MseqError(MotionSrcError):
    pass


class BadMagicError(MseqError):
    pass


class TruncatedPayloadError(MseqError):
    pass


class VersionMismatchError(MseqError):
    pass
