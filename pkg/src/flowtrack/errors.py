"""Exception types shared across the package."""


class NumericalError(Exception):
    """A computation left the numerically valid regime."""


class SingularityError(NumericalError):
    """A matrix that must be invertible is singular, or a geometric
    configuration makes a Jacobian undefined."""


class FlowInvertibilityError(NumericalError):
    """A particle-flow step produced a map whose Jacobian determinant is
    too close to zero to invert."""


class DegenerateWeightsError(NumericalError):
    """A weight vector that must carry positive total mass is all zero
    (or otherwise unusable)."""


class DegenerateRowError(NumericalError):
    """A marginalization row has no mass, so normalized association
    probabilities are undefined."""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class CsvFormatError(Exception):
    """A CSV input file does not match the expected layout."""
