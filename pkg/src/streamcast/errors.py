class ContractError(ValueError):
    """A caller broke an interface precondition (shapes, labels, ordering)."""


class DataError(ValueError):
    """Malformed or invalid input data."""


class InsufficientDataError(DataError):
    """Not enough observations for the requested operation."""


class EmptyDesignError(InsufficientDataError):
    """A design matrix would have no usable rows."""
