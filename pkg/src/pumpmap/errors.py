"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PumpmapError(Exception):
    exit_code = 1


class InvalidArgumentError(PumpmapError, ValueError):
    exit_code = 2


class InvalidConfigError(PumpmapError, ValueError):
    exit_code = 3


class FileFormatError(PumpmapError):
    """Malformed VGD1/FMP1/spectrum file."""

    exit_code = 4


class NonAxisymmetricError(FileFormatError):
    pass


class NumericError(PumpmapError, ArithmeticError):
    exit_code = 5


class DegenerateRayError(NumericError):
    pass


class DomainMismatchError(NumericError):
    pass


class GridTooSmallError(NumericError):
    pass


class NoAbsorptionError(NumericError):
    pass


class NoModeFoundError(NumericError):
    pass


class MeshTooCoarseError(NumericError):
    pass


class OutOfDomainError(NumericError):
    pass


class UnnormalizedInputError(NumericError):
    pass


class RegionEmptyError(NumericError):
    pass


class MissingConstantError(NumericError):
    pass


class NonPositiveInputError(NumericError):
    pass


class ZeroDetectorPowerError(NumericError):
    pass
