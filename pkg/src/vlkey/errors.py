"""Exception types raised across the package."""


class ContractError(ValueError):
    """A caller or a party broke an interface contract."""


class NonTerminationError(RuntimeError):
    """A protocol branch ran past its round cap."""


class EnumerationLimitError(ValueError):
    """An instance is too large for exact enumeration; use sampled mode."""


class InfeasibleCodeError(ValueError):
    """Requested linear-code parameters fail the Gilbert-Varshamov condition."""
