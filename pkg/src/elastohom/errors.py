"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class ElastohomError(Exception):
    exit_code = 1


class InvalidInput(ElastohomError):
    exit_code = 10


class SymmetryViolation(ElastohomError):
    exit_code = 2


class NoSeparation(ElastohomError):
    exit_code = 3


class NotElliptic(ElastohomError):
    exit_code = 4


class GridMismatch(ElastohomError):
    exit_code = 5


class NoConvergence(ElastohomError):
    exit_code = 6


class IncompatibleRHS(ElastohomError):
    exit_code = 7


class HomSingular(ElastohomError):
    exit_code = 8


class CoercivityFailure(ElastohomError):
    exit_code = 9


class EpsilonTooLarge(ElastohomError):
    exit_code = 11


class InsufficientData(ElastohomError):
    exit_code = 12


class MismatchedFibers(ElastohomError):
    exit_code = 13


class EmptySpectrumList(ElastohomError):
    exit_code = 14


class SlopeCheckFailed(ElastohomError):
    exit_code = 15


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (
        SymmetryViolation, NoSeparation, NotElliptic, GridMismatch, NoConvergence,
        IncompatibleRHS, HomSingular, CoercivityFailure, InvalidInput, EpsilonTooLarge,
        InsufficientData, MismatchedFibers, EmptySpectrumList, SlopeCheckFailed,
    )
}
