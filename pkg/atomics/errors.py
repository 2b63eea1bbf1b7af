"""Exception hierarchy.

`ValidationError` marks bad inputs (CLI exit code 2), `NumericalError` marks a
computation that could not be completed (CLI exit code 3).
"""


class AtomicsError(Exception):
    pass


class ValidationError(AtomicsError, ValueError):
    pass


class NumericalError(AtomicsError, RuntimeError):
    pass


# measures
class NonPositiveWeight(ValidationError):
    pass


class MassNotOne(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DuplicateLocation(ValidationError):
    pass


# transport
class InvalidProfile(ValidationError):
    pass


# sampling / capacity
class InvalidParameter(ValidationError):
    pass


class InvalidParameters(ValidationError):
    pass


class InvalidBase(ValidationError):
    pass


# cylinder
class NonFactorizedInner(ValidationError):
    pass


# dynamics
class GridTooCoarse(ValidationError):
    pass


class BoundaryIndex(ValidationError):
    pass


class FieldEvaluationFailure(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


# superposition
class GridMismatch(ValidationError):
    pass


class SpectrumRejected(ValidationError):
    pass


class MatchingInfeasible(ValidationError):
    pass


class DegenerateLaw(ValidationError):
    pass


# counterexample
class InsufficientDepth(ValidationError):
    pass


# manifold
class OffSurface(ValidationError):
    pass


class NonTangentField(ValidationError):
    pass


class TiedWeights(ValidationError):
    pass


# io / cli
class FormatVersionMismatch(ValidationError):
    pass


class ConfigParse(ValidationError):
    pass


class UnknownSubcommand(ValidationError):
    pass


class SolverFailure(NumericalError):
    pass
