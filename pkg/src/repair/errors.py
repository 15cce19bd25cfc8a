"""Exception hierarchy.

Every error raised by the package derives from :class:`RepairError`; the
concrete classes additionally subclass the closest builtin so callers can
catch ``ValueError`` / ``KeyError`` style errors without importing this
module.
"""


class RepairError(Exception):
    """Base class for all package errors."""


class ValidationError(RepairError, ValueError):
    pass


class InvalidLabel(ValidationError):
    pass


class NonFiniteScore(ValidationError):
    pass


class AsymmetricSimilarity(ValidationError):
    pass


class SparseTooShort(ValidationError):
    pass


class ShortlistTooLarge(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class NotInShortlist(RepairError, KeyError):
    pass


class SamePair(NotInShortlist):
    """Raised when a pairwise quantity is requested for ``y == j``."""


class DivisionByZero(RepairError, ZeroDivisionError):
    pass


class SimilarityRequired(ValidationError):
    pass


class SingletonShortlist(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class UncoveredExample(ValidationError):
    pass


Uncovered = UncoveredExample


class EmptyCalibration(ValidationError):
    pass


class OptimizerDiverged(RepairError, ArithmeticError):
    pass


class EmptyGroup(ValidationError):
    pass


class NonPositiveVariance(ValidationError):
    pass


class ZeroPrior(ValidationError):
    pass


class MissingWeightNorms(ValidationError):
    pass


class NonPositiveNorm(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class NoCoveredExamples(ValidationError):
    pass


class NoBaseErrors(ValidationError):
    pass


class SaturatedBase(ValidationError):
    pass


class InsufficientContexts(ValidationError):
    pass


class TooFewClasses(ValidationError):
    pass


class NoGenerativeTruth(RepairError, TypeError):
    pass


class InvalidSpec(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.column = column
        self.path = path


class HeaderMismatch(ParseError):
    pass


class VersionMismatch(ParseError):
    pass
