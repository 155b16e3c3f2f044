"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Extents of an argument do not match what the operation requires."""


class ContractError(ValueError):
    """An argument violates an operation's contract (kind, range, finiteness)."""
