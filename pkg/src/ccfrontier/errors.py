"""Exception types raised across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedCapability(NotImplementedError):
    """The problem instance does not provide the requested oracle."""


class InfeasibleError(ValueError):
    """A projection target or feasibility subproblem has no solution."""


class InitializationError(RuntimeError):
    """The scenario initializer failed to find a feasible point."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
