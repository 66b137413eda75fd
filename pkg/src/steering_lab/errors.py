"""Exception hierarchy shared across the package.

Every error raised on purpose derives from SteeringLabError so the CLI can
report a single machine-parsable line and pick an exit code.
"""


class SteeringLabError(Exception):
    """Base class for all deliberate errors in steering_lab."""


class ValidationError(SteeringLabError):
    """A parameter is outside its documented range or an invariant failed."""


class SingularResolutionError(SteeringLabError):
    """The Pauli resolution over displacement projectors does not exist.

    Raised for r = 0 (division by the amplitude) and for r >= 1 (the
    Z-component denominator 1 - r^2 vanishes at r = 1 and flips sign above).
    """


class SingularDecompositionError(SteeringLabError):
    """The coefficient decomposition is singular at the requested amplitude."""


class CutoffError(SteeringLabError):
    """A photon-number cutoff is too small for the requested amplitudes."""


class NormalizationError(SteeringLabError):
    """A probability table fails its per-setting normalization check."""


class ParseError(SteeringLabError):
    """A text input (counts file, config file) is malformed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FitError(SteeringLabError):
    """The cosine-fit design matrix is rank deficient."""


class ExtractionError(SteeringLabError):
    """No sweep sample lies close enough to a required phase."""


class IndeterminateFeasibilityError(SteeringLabError):
    """A feasibility solve hit its iteration budget without a verdict."""
