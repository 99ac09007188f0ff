"""Exception types raised across the package."""


class DomainError(ValueError):
    """A time value falls outside the domain of a basis function."""


class ParameterError(ValueError):
    """A nonlinear parameter is missing or outside its admissible range."""


class DegenerateDesignError(ValueError):
    """The design matrix is numerically rank deficient.

    Attributes
    ----------
    condition : float
        Estimated 2-norm condition number of the column-normalized design.
    """

    def __init__(self, condition, message=None):
        self.condition = float(condition)
        if message is None:
            message = f"design matrix is degenerate (condition estimate {self.condition:.3e})"
        super().__init__(message)


class TrackerStateError(RuntimeError):
    """Operation not permitted in the tracker's current phase."""


class OrderingError(ValueError):
    """Samples were supplied out of time order."""
