"""Relative-entropy conservation checks for quantum measurements on truncated spaces."""

from .errors import (
    AmbiguousMatchError,
    ConsistencyError,
    IncompatibleGridsError,
    InvalidModelError,
    NullEventError,
    NumericalFailureError,
    ParameterRangeError,
    PositivityViolationError,
    QmeasError,
    UnsupportedSpaceError,
)
from .hilbert import GUARD_BAND, HilbertSpec
from .measurement import Distribution, JointDistribution, KrausInstrument, OutcomeGrid, PovmDensity

__version__ = "0.1.0"
