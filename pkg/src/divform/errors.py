"""Exception hierarchy.

Every error raised by the package derives from :class:`DivformError` and
carries a short machine-readable ``code`` that matches the failure modes
reported by the command line harness.
"""


class DivformError(Exception):
    code = "ERROR"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class OutOfRegionError(DivformError):
    code = "OUT_OF_REGION"


class RegionMismatchError(DivformError):
    code = "REGION_MISMATCH"


class NotSingularCornerError(DivformError):
    code = "NOT_SINGULAR_CORNER"


class DomainNotHalfCubeError(DivformError):
    code = "DOMAIN_NOT_HALF_CUBE"


class NonpositiveScaleError(DivformError):
    code = "NONPOSITIVE_SCALE"


class CoefficientGapError(DivformError):
    code = "COEFFICIENT_GAP"


class LabelError(DivformError):
    code = "LABEL_ERROR"


class EmptySurfaceError(DivformError):
    code = "EMPTY_SURFACE"


class DimensionMismatchError(DivformError):
    code = "DIMENSION_MISMATCH"


class SingularOperatorError(DivformError):
    code = "SINGULAR"


class ZeroModeError(DivformError):
    code = "ZERO_MODE"


class MMatrixViolationError(DivformError):
    code = "M_MATRIX_VIOLATION"


class IncompatibleMeshesError(DivformError):
    code = "INCOMPATIBLE_MESHES"


class AsymmetricMeshError(DivformError):
    code = "ASYMMETRIC_MESH"


class DegenerateCoefficientError(DivformError):
    code = "DEGENERATE_COEFFICIENT"


class StepRejectedError(DivformError):
    code = "STEP_REJECTED"


class BlowUpError(DivformError):
    code = "BLOW_UP"


class EtaBoundsError(DivformError):
    code = "ETA_BOUNDS"


class TimeOutOfRangeError(DivformError):
    code = "TIME_OUT_OF_RANGE"


class AuxSingularError(DivformError):
    code = "AUX_SINGULAR"


class ConfigError(DivformError):
    code = "CONFIG_ERROR"
