"""Exception hierarchy shared by all qmeas modules."""


class QmeasError(Exception):
    """Base class for library errors."""


class UnsupportedSpaceError(QmeasError, ValueError):
    """Operation requested on a Hilbert space kind that does not support it."""


class NumericalFailureError(QmeasError, ArithmeticError):
    """A numerical routine did not converge; ``residual`` carries the evidence."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class PositivityViolationError(QmeasError, ValueError):
    """A probability density came out negative beyond the clipping tolerance."""


class NullEventError(QmeasError, ValueError):
    """Conditioning on an outcome whose probability is below the floor."""


class IncompatibleGridsError(QmeasError, ValueError):
    """Two distributions do not share one outcome grid."""


class InvalidModelError(QmeasError, ValueError):
    """Model parameters violate a constructor precondition."""


class ParameterRangeError(QmeasError, ValueError):
    """Parameters would push a model outside its overflow-safe range."""


class AmbiguousMatchError(QmeasError, ValueError):
    """Sufficient-statistic matching found several equally good candidates."""

    def __init__(self, message, candidates=()):
        super().__init__(f"{message}: candidates={list(candidates)}")
        self.candidates = list(candidates)


class ConsistencyError(QmeasError, AssertionError):
    """Conditions that a theorem proves equivalent disagreed."""
