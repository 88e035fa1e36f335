class SlideGradeError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(SlideGradeError, ValueError):
    pass


class ConfigurationError(SlideGradeError, ValueError):
    pass


class UndefinedSimilarityError(SlideGradeError, ArithmeticError):
    """Cosine similarity requested for a zero-norm vector."""
