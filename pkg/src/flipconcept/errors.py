"""Exception hierarchy. The CLI maps each family onto a stable exit code."""


class FlipConceptError(Exception):
    exit_code = 1


class ParameterError(FlipConceptError, ValueError):
    """Invalid numeric parameter (schedule range, denoiser dims, ...)."""


class DimensionError(FlipConceptError, ValueError):
    """Shape mismatch between fields."""


class ConfigError(FlipConceptError):
    exit_code = 1


class FormatError(FlipConceptError, OSError):
    """Malformed or unreadable file (LTF1, PGM/PPM, track manifest)."""

    exit_code = 2


class NumericContractError(FlipConceptError):
    """A numeric guarantee (e.g. reconstruction error bound) was violated."""

    exit_code = 3


class MaskError(FlipConceptError, ValueError):
    exit_code = 1


class MaskDisjointnessError(MaskError):
    exit_code = 4


class EmptyMaskError(MaskError):
    pass
