"""Exception and warning types shared across modules."""


class DegenerateMarket(ArithmeticError):
    """Raised when a replication system is singular or too ill-conditioned to solve."""


class ArbitrageWarning(UserWarning):
    """Emitted when risk-neutral branch probabilities leave [0, 1]."""


class BoundaryWarning(UserWarning):
    """Emitted when a fitted parameter sits on the edge of its search domain."""


class DataWarning(UserWarning):
    """Emitted when input rows are dropped or reordered during loading."""
